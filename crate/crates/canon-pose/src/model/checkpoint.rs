//! Versioned checkpoint container: network spec, all three parameter sets,
//! optimizer state, progress counters, and the training seed. Round-trips are
//! bit-exact at 32-bit precision, so a resumed run continues identically.
//!
//! Layout (little-endian): magic `RICP`, version u32 = 1, spec fields, the
//! counters, three parameter blocks, three optimizer blocks, CRC32 footer
//! over everything after the 8-byte prelude.

use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

use super::{Model, NetworkSpec, ParameterSet};

const MAGIC: &[u8; 4] = b"RICP";
const VERSION: u32 = 1;

/// First and second Adam moments for one network, aligned with its parameter
/// entries, plus the network's update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOptState {
    pub t: u64,
    pub m: Vec<ArrayD<f32>>,
    pub v: Vec<ArrayD<f32>>,
}

impl NetOptState {
    pub fn zeros_like(params: &ParameterSet<f32>) -> Self {
        let m = params
            .iter()
            .map(|(_, v)| ArrayD::zeros(v.raw_dim()))
            .collect::<Vec<_>>();
        NetOptState {
            t: 0,
            v: m.clone(),
            m,
        }
    }
}

/// Optimizer state for the whole model.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub encoder: NetOptState,
    pub decoder: NetOptState,
    pub critic: NetOptState,
}

impl OptimizerState {
    pub fn zeros_like(model: &Model) -> Self {
        OptimizerState {
            encoder: NetOptState::zeros_like(&model.encoder),
            decoder: NetOptState::zeros_like(&model.decoder),
            critic: NetOptState::zeros_like(&model.critic),
        }
    }
}

/// Everything needed to resume training bit-compatibly, or to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: OptimizerState,
    /// Number of completed epochs.
    pub epoch: u64,
    /// Number of completed optimizer steps (critic cadence phase lives here).
    pub global_step: u64,
    /// Master seed; per-epoch rng streams are derived from it, which is the
    /// entire rng state needed at an epoch boundary.
    pub seed: u64,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn array(&mut self, a: &ArrayD<f32>) {
        self.u32(a.ndim() as u32);
        for &d in a.shape() {
            self.u32(d as u32);
        }
        for &v in a.iter() {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn params(&mut self, ps: &ParameterSet<f32>) {
        self.str(&ps.net);
        self.u32(ps.len() as u32);
        for (name, value) in ps.iter() {
            self.str(name);
            self.array(value);
        }
    }
    fn opt(&mut self, s: &NetOptState) {
        self.u64(s.t);
        self.u32(s.m.len() as u32);
        for a in &s.m {
            self.array(a);
        }
        for a in &s.v {
            self.array(a);
        }
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut w = Writer { buf: Vec::new() };
    let spec = &ckpt.model.spec;
    w.u32(spec.input_size as u32);
    w.u32(spec.content_dim as u32);
    w.f64(spec.negative_slope);
    w.u32(spec.encoder_channels.len() as u32);
    for &c in &spec.encoder_channels {
        w.u32(c as u32);
    }
    w.u32(spec.critic_channels.len() as u32);
    for &c in &spec.critic_channels {
        w.u32(c as u32);
    }
    w.u64(ckpt.epoch);
    w.u64(ckpt.global_step);
    w.u64(ckpt.seed);
    w.params(&ckpt.model.encoder);
    w.params(&ckpt.model.decoder);
    w.params(&ckpt.model.critic);
    w.opt(&ckpt.optimizer.encoder);
    w.opt(&ckpt.optimizer.decoder);
    w.opt(&ckpt.optimizer.critic);

    let crc = crc32fast::hash(&w.buf);
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    out.write_all(MAGIC).map_err(io_err)?;
    out.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    out.write_all(&w.buf).map_err(io_err)?;
    out.write_all(&crc.to_le_bytes()).map_err(io_err)?;
    out.flush().map_err(io_err)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if self.bytes.len() < end {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: end as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format {
            path: self.path.to_path_buf(),
            detail: "invalid utf-8 in checkpoint".into(),
        })
    }
    fn array(&mut self) -> Result<ArrayD<f32>> {
        let ndim = self.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = self.take(len * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| Error::Format {
            path: self.path.to_path_buf(),
            detail: format!("bad array in checkpoint: {e}"),
        })
    }
    fn params(&mut self) -> Result<ParameterSet<f32>> {
        let net = self.str()?;
        let count = self.u32()? as usize;
        let mut ps = ParameterSet::new(&net);
        for _ in 0..count {
            let name = self.str()?;
            let value = self.array()?;
            ps.push(name, value);
        }
        Ok(ps)
    }
    fn opt(&mut self) -> Result<NetOptState> {
        let t = self.u64()?;
        let count = self.u32()? as usize;
        let mut m = Vec::with_capacity(count);
        for _ in 0..count {
            m.push(self.array()?);
        }
        let mut v = Vec::with_capacity(count);
        for _ in 0..count {
            v.push(self.array()?);
        }
        Ok(NetOptState { t, m, v })
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: 12,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("bad checkpoint magic {:?}", &bytes[0..4]),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            supported: VERSION,
        });
    }
    let body = &bytes[8..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }

    let mut r = Reader {
        bytes: body,
        pos: 0,
        path,
    };
    let input_size = r.u32()? as usize;
    let content_dim = r.u32()? as usize;
    let negative_slope = r.f64()?;
    let enc_len = r.u32()? as usize;
    let mut encoder_channels = Vec::with_capacity(enc_len);
    for _ in 0..enc_len {
        encoder_channels.push(r.u32()? as usize);
    }
    let crit_len = r.u32()? as usize;
    let mut critic_channels = Vec::with_capacity(crit_len);
    for _ in 0..crit_len {
        critic_channels.push(r.u32()? as usize);
    }
    let spec = NetworkSpec::new(
        input_size,
        content_dim,
        encoder_channels,
        critic_channels,
        negative_slope,
    )?;
    let epoch = r.u64()?;
    let global_step = r.u64()?;
    let seed = r.u64()?;
    let encoder = r.params()?;
    let decoder = r.params()?;
    let critic = r.params()?;
    let opt_encoder = r.opt()?;
    let opt_decoder = r.opt()?;
    let opt_critic = r.opt()?;

    Ok(Checkpoint {
        model: Model {
            spec,
            encoder,
            decoder,
            critic,
        },
        optimizer: OptimizerState {
            encoder: opt_encoder,
            decoder: opt_decoder,
            critic: opt_critic,
        },
        epoch,
        global_step,
        seed,
    })
}
