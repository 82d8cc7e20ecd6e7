//! Encoder, decoder, and critic over the autodiff tape, including the latent
//! split that reserves scalar 0 for the rotation angle.
//!
//! Architecture: the encoder is a stack of stride-2 kernel-4 convolutions
//! (leaky rectifier) followed by an affine head to `1 + D`; the decoder
//! mirrors it with transposed convolutions and a terminal logistic squashing
//! to `(0, 1)`; the critic is a shorter convolution stack ending in one
//! unbounded score per image, with no normalization layers so weight clipping
//! stays meaningful.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NetOptState, OptimizerState};

use ndarray::{Array1, Array2, Array4, ArrayD, ArrayView2, ArrayView4, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{conv_out_size, conv_transpose_out_size, Element, Graph, NodeId};
use crate::error::{Error, Result};
use crate::imaging::Angle;
use crate::rng::{derived_rng, domain};

/// Every convolution in the three networks shares this geometry.
pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;

const INIT_STD: f64 = 0.02;

/// One latent code: the predicted rotation scalar plus the content vector.
/// The decoder and critic never see `theta_hat`; content is the only thing
/// they can consume.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    /// Predicted rotation, an unbounded real.
    pub theta_hat: Angle,
    /// Content vector of dimension `D`.
    pub z: Vec<f32>,
}

/// Shape hyperparameters of the three networks.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkSpec {
    pub input_size: usize,
    /// Content dimension `D`; the encoder emits `1 + D` values per image.
    pub content_dim: usize,
    pub encoder_channels: Vec<usize>,
    pub critic_channels: Vec<usize>,
    pub negative_slope: f64,
}

impl NetworkSpec {
    pub fn new(
        input_size: usize,
        content_dim: usize,
        encoder_channels: Vec<usize>,
        critic_channels: Vec<usize>,
        negative_slope: f64,
    ) -> Result<Self> {
        let spec = NetworkSpec {
            input_size,
            content_dim,
            encoder_channels,
            critic_channels,
            negative_slope,
        };
        if spec.content_dim == 0 {
            return Err(Error::Config("content dimension must be positive".into()));
        }
        if spec.encoder_channels.is_empty() || spec.critic_channels.is_empty() {
            return Err(Error::Config("channel lists must be non-empty".into()));
        }
        if !(0.0..1.0).contains(&spec.negative_slope) {
            return Err(Error::Config(format!(
                "leaky rectifier slope {} outside [0, 1)",
                spec.negative_slope
            )));
        }
        // Both downsampling chains must keep a spatial size of at least 1.
        spec.encoder_sizes()?;
        spec.critic_sizes()?;
        Ok(spec)
    }

    /// The default shapes: encoder 32-64-128-256, critic 32-64-128, D from the
    /// caller, slope 0.2.
    pub fn with_defaults(input_size: usize, content_dim: usize) -> Result<Self> {
        NetworkSpec::new(
            input_size,
            content_dim,
            vec![32, 64, 128, 256],
            vec![32, 64, 128],
            0.2,
        )
    }

    fn chain(&self, layers: usize) -> Result<Vec<usize>> {
        let mut sizes = vec![self.input_size];
        for _ in 0..layers {
            let next = conv_out_size(*sizes.last().expect("non-empty"), KERNEL, STRIDE, PAD)?;
            if next == 0 {
                return Err(Error::Config(format!(
                    "input size {} collapses below 1 px after {layers} stride-2 layers",
                    self.input_size
                )));
            }
            sizes.push(next);
        }
        Ok(sizes)
    }

    /// Spatial sizes along the encoder: `[input, s1, .., s_last]`.
    pub fn encoder_sizes(&self) -> Result<Vec<usize>> {
        self.chain(self.encoder_channels.len())
    }

    fn critic_sizes(&self) -> Result<Vec<usize>> {
        self.chain(self.critic_channels.len())
    }

    /// Flattened width at the encoder head.
    fn encoder_flat(&self) -> Result<usize> {
        let sizes = self.encoder_sizes()?;
        let last = *sizes.last().expect("non-empty");
        Ok(self.encoder_channels.last().expect("non-empty") * last * last)
    }

    fn critic_flat(&self) -> Result<usize> {
        let sizes = self.critic_sizes()?;
        let last = *sizes.last().expect("non-empty");
        Ok(self.critic_channels.last().expect("non-empty") * last * last)
    }

    pub fn latent_width(&self) -> usize {
        1 + self.content_dim
    }
}

/// Named trainable arrays of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T: Element> {
    pub net: String,
    entries: Vec<(String, ArrayD<T>)>,
}

impl<T: Element> ParameterSet<T> {
    fn new(net: &str) -> Self {
        ParameterSet {
            net: net.to_string(),
            entries: Vec::new(),
        }
    }

    fn push(&mut self, name: String, value: ArrayD<T>) {
        self.entries.push((name, value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<T>)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn value(&self, index: usize) -> &ArrayD<T> {
        &self.entries[index].1
    }

    pub fn value_mut(&mut self, index: usize) -> &mut ArrayD<T> {
        &mut self.entries[index].1
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
    }

    /// Clamps every entry into `[-c, c]`.
    pub fn clip(&mut self, c: T) {
        for (_, v) in &mut self.entries {
            v.mapv_inplace(|x| x.max(-c).min(c));
        }
    }

    /// Largest absolute value over all entries.
    pub fn max_abs(&self) -> T {
        self.entries
            .iter()
            .flat_map(|(_, v)| v.iter())
            .fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|(_, v)| v.iter().all(|x| x.is_finite()))
    }

    /// Checksum of the raw parameter bits; used to assert that a training
    /// substep left a network untouched.
    pub fn digest(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for (name, v) in &self.entries {
            hasher.update(name.as_bytes());
            for x in v.iter() {
                hasher.update(&x.as_f64().to_le_bytes());
            }
        }
        hasher.finalize()
    }

    /// Inserts every parameter as a leaf node of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        let ids = self
            .entries
            .iter()
            .map(|(_, v)| g.input(v.clone()))
            .collect();
        BoundParams { ids }
    }
}

/// Node ids of one parameter set inside one graph, aligned with the set's
/// entry order.
pub struct BoundParams {
    ids: Vec<NodeId>,
}

impl BoundParams {
    pub fn id(&self, index: usize) -> NodeId {
        self.ids[index]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

fn truncated_normal<T: Element, R: Rng>(rng: &mut R, shape: &[usize]) -> ArrayD<T> {
    let normal = Normal::new(0.0f64, INIT_STD).expect("valid std");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || {
        loop {
            let v = normal.sample(rng);
            if v.abs() <= 2.0 * INIT_STD {
                break T::from_f64(v);
            }
        }
    })
}

fn zeros<T: Element>(shape: &[usize]) -> ArrayD<T> {
    ArrayD::zeros(IxDyn(shape))
}

/// Which of the three networks a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Net {
    Encoder,
    Decoder,
    Critic,
}

impl Net {
    pub fn name(self) -> &'static str {
        match self {
            Net::Encoder => "encoder",
            Net::Decoder => "decoder",
            Net::Critic => "critic",
        }
    }

    fn init_stream(self) -> u64 {
        match self {
            Net::Encoder => 0,
            Net::Decoder => 1,
            Net::Critic => 2,
        }
    }
}

/// Initializes one network: truncated-normal weights (std 0.02, clipped at
/// two sigma) and zero biases, on an rng stream derived from `(seed, net)`.
pub fn init_params<T: Element>(spec: &NetworkSpec, net: Net, seed: u64) -> Result<ParameterSet<T>> {
    let mut rng = derived_rng(domain::INIT, seed, net.init_stream());
    let mut ps = ParameterSet::new(net.name());
    match net {
        Net::Encoder => {
            let mut in_ch = 1;
            for (i, &out_ch) in spec.encoder_channels.iter().enumerate() {
                ps.push(
                    format!("conv{i}.weight"),
                    truncated_normal(&mut rng, &[out_ch, in_ch, KERNEL, KERNEL]),
                );
                ps.push(format!("conv{i}.bias"), zeros(&[out_ch]));
                in_ch = out_ch;
            }
            let flat = spec.encoder_flat()?;
            ps.push(
                "head.weight".into(),
                truncated_normal(&mut rng, &[spec.latent_width(), flat]),
            );
            ps.push("head.bias".into(), zeros(&[spec.latent_width()]));
        }
        Net::Decoder => {
            let flat = spec.encoder_flat()?;
            ps.push(
                "head.weight".into(),
                truncated_normal(&mut rng, &[flat, spec.content_dim]),
            );
            ps.push("head.bias".into(), zeros(&[flat]));
            let mut channels: Vec<usize> = spec.encoder_channels.clone();
            channels.reverse(); // e.g. [256, 128, 64, 32]
            channels.push(1);
            for i in 0..channels.len() - 1 {
                ps.push(
                    format!("deconv{i}.weight"),
                    truncated_normal(&mut rng, &[channels[i], channels[i + 1], KERNEL, KERNEL]),
                );
                ps.push(format!("deconv{i}.bias"), zeros(&[channels[i + 1]]));
            }
        }
        Net::Critic => {
            let mut in_ch = 1;
            for (i, &out_ch) in spec.critic_channels.iter().enumerate() {
                ps.push(
                    format!("conv{i}.weight"),
                    truncated_normal(&mut rng, &[out_ch, in_ch, KERNEL, KERNEL]),
                );
                ps.push(format!("conv{i}.bias"), zeros(&[out_ch]));
                in_ch = out_ch;
            }
            let flat = spec.critic_flat()?;
            ps.push(
                "head.weight".into(),
                truncated_normal(&mut rng, &[1, flat]),
            );
            ps.push("head.bias".into(), zeros(&[1]));
        }
    }
    Ok(ps)
}

/// Encoder forward pass on the tape: `[B, 1, H, W] -> [B, 1 + D]`.
pub fn encoder_forward<T: Element>(
    g: &mut Graph<T>,
    spec: &NetworkSpec,
    bound: &BoundParams,
    x: NodeId,
) -> Result<NodeId> {
    let slope = T::from_f64(spec.negative_slope);
    let mut cur = x;
    let layers = spec.encoder_channels.len();
    for i in 0..layers {
        let w = bound.id(2 * i);
        let b = bound.id(2 * i + 1);
        cur = g.conv2d(cur, w, b, STRIDE, PAD)?;
        cur = g.leaky_relu(cur, slope);
    }
    let batch = g.value(x).shape()[0];
    let flat = spec.encoder_flat()?;
    let flattened = g.reshape(cur, &[batch, flat])?;
    g.affine(flattened, bound.id(2 * layers), bound.id(2 * layers + 1))
}

/// Decoder forward pass on the tape: `[B, D] -> [B, 1, H, W]`, pixels in
/// `(0, 1)`.
pub fn decoder_forward<T: Element>(
    g: &mut Graph<T>,
    spec: &NetworkSpec,
    bound: &BoundParams,
    z: NodeId,
) -> Result<NodeId> {
    let slope = T::from_f64(spec.negative_slope);
    let sizes = spec.encoder_sizes()?;
    let batch = g.value(z).shape()[0];
    let c_last = *spec.encoder_channels.last().expect("non-empty");
    let s_last = *sizes.last().expect("non-empty");

    let mut cur = g.affine(z, bound.id(0), bound.id(1))?;
    cur = g.reshape(cur, &[batch, c_last, s_last, s_last])?;
    cur = g.leaky_relu(cur, slope);

    // Walk the encoder size chain backwards, choosing the output padding that
    // reproduces each spatial size exactly.
    let layers = spec.encoder_channels.len();
    for i in 0..layers {
        let small = sizes[layers - i];
        let target = sizes[layers - i - 1];
        let base = conv_transpose_out_size(small, KERNEL, STRIDE, PAD, 0)?;
        let out_pad = target.checked_sub(base).ok_or_else(|| {
            Error::Dimension(format!(
                "decoder cannot reach size {target} from {small} (base {base})"
            ))
        })?;
        let w = bound.id(2 + 2 * i);
        let b = bound.id(2 + 2 * i + 1);
        cur = g.conv_transpose2d(cur, w, b, STRIDE, PAD, out_pad)?;
        if i + 1 < layers {
            cur = g.leaky_relu(cur, slope);
        } else {
            cur = g.sigmoid(cur);
        }
    }
    Ok(cur)
}

/// Critic forward pass on the tape: `[B, 1, H, W] -> [B]` unbounded scores.
pub fn critic_forward<T: Element>(
    g: &mut Graph<T>,
    spec: &NetworkSpec,
    bound: &BoundParams,
    x: NodeId,
) -> Result<NodeId> {
    let slope = T::from_f64(spec.negative_slope);
    let mut cur = x;
    let layers = spec.critic_channels.len();
    for i in 0..layers {
        cur = g.conv2d(cur, bound.id(2 * i), bound.id(2 * i + 1), STRIDE, PAD)?;
        cur = g.leaky_relu(cur, slope);
    }
    let batch = g.value(x).shape()[0];
    let flat = spec.critic_flat()?;
    let flattened = g.reshape(cur, &[batch, flat])?;
    let scores = g.affine(flattened, bound.id(2 * layers), bound.id(2 * layers + 1))?;
    g.reshape(scores, &[batch])
}

/// Splits rows of a `[B, 1 + D]` matrix into angle scalars (column 0) and
/// content vectors (columns 1..). Graph-side counterpart of [`split_latent`].
pub fn split_latent_graph<T: Element>(
    g: &mut Graph<T>,
    latent: NodeId,
    content_dim: usize,
) -> Result<(NodeId, NodeId)> {
    let width = g.value(latent).shape()[1];
    if width != 1 + content_dim {
        return Err(Error::Dimension(format!(
            "latent width {width} does not match 1 + D = {}",
            1 + content_dim
        )));
    }
    let batch = g.value(latent).shape()[0];
    let theta_col = g.slice_cols(latent, 0, 1)?;
    let theta = g.reshape(theta_col, &[batch])?;
    let z = g.slice_cols(latent, 1, 1 + content_dim)?;
    Ok((theta, z))
}

/// Splits raw `[B, 1 + D]` encoder outputs into latent codes.
pub fn split_latent(raw: ArrayView2<f32>, content_dim: usize) -> Result<Vec<LatentCode>> {
    if raw.ncols() != 1 + content_dim {
        return Err(Error::Dimension(format!(
            "latent width {} does not match 1 + D = {}",
            raw.ncols(),
            1 + content_dim
        )));
    }
    raw.rows()
        .into_iter()
        .map(|row| {
            Ok(LatentCode {
                theta_hat: Angle::new(row[0] as f64)?,
                z: row.iter().skip(1).map(|&v| v).collect(),
            })
        })
        .collect()
}

/// Stacks the content vectors of latent codes back into a `[B, D]` matrix.
pub fn codes_to_content(codes: &[LatentCode]) -> Result<Array2<f32>> {
    let first = codes
        .first()
        .ok_or_else(|| Error::Argument("no latent codes".into()))?;
    let d = first.z.len();
    let mut out = Array2::zeros((codes.len(), d));
    for (i, code) in codes.iter().enumerate() {
        if code.z.len() != d {
            return Err(Error::Dimension("ragged content vectors".into()));
        }
        for (j, &v) in code.z.iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

fn check_finite<T: Element>(v: &ArrayD<T>, what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite activations in {what}")));
    }
    Ok(())
}

fn check_batch_shape(batch: &ArrayView4<f32>, spec: &NetworkSpec, what: &str) -> Result<()> {
    let (_, c, h, w) = batch.dim();
    if c != 1 || h != spec.input_size || w != spec.input_size {
        return Err(Error::Dimension(format!(
            "{what} expects [B, 1, {0}, {0}] input, got {1:?}",
            spec.input_size,
            batch.dim()
        )));
    }
    Ok(())
}

/// Forward-only encode: one latent code per image.
pub fn encode(
    spec: &NetworkSpec,
    params: &ParameterSet<f32>,
    batch: ArrayView4<f32>,
) -> Result<Vec<LatentCode>> {
    check_batch_shape(&batch, spec, "encode")?;
    let mut g = Graph::<f32>::new();
    let bound = params.bind(&mut g);
    let x = g.input(batch.to_owned().into_dyn());
    let out = encoder_forward(&mut g, spec, &bound, x)?;
    let value = g.value(out).to_owned();
    check_finite(&value, "encoder")?;
    split_latent(
        value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("encoder output is 2-d"),
        spec.content_dim,
    )
}

/// Forward-only decode of content vectors into canonical images.
pub fn decode(
    spec: &NetworkSpec,
    params: &ParameterSet<f32>,
    z: ArrayView2<f32>,
) -> Result<Array4<f32>> {
    if z.ncols() != spec.content_dim {
        return Err(Error::Dimension(format!(
            "decode expects content width {}, got {}",
            spec.content_dim,
            z.ncols()
        )));
    }
    let mut g = Graph::<f32>::new();
    let bound = params.bind(&mut g);
    let zid = g.input(z.to_owned().into_dyn());
    let out = decoder_forward(&mut g, spec, &bound, zid)?;
    let value = g.value(out).to_owned();
    check_finite(&value, "decoder")?;
    Ok(value
        .into_dimensionality::<ndarray::Ix4>()
        .expect("decoder output is 4-d"))
}

/// Forward-only critic scores.
pub fn criticize(
    spec: &NetworkSpec,
    params: &ParameterSet<f32>,
    batch: ArrayView4<f32>,
) -> Result<Array1<f32>> {
    check_batch_shape(&batch, spec, "criticize")?;
    let mut g = Graph::<f32>::new();
    let bound = params.bind(&mut g);
    let x = g.input(batch.to_owned().into_dyn());
    let out = critic_forward(&mut g, spec, &bound, x)?;
    let value = g.value(out).to_owned();
    check_finite(&value, "critic")?;
    Ok(value
        .into_dimensionality::<ndarray::Ix1>()
        .expect("critic output is 1-d"))
}

/// The three parameter sets plus their shape spec; what checkpoints persist.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: NetworkSpec,
    pub encoder: ParameterSet<f32>,
    pub decoder: ParameterSet<f32>,
    pub critic: ParameterSet<f32>,
}

impl Model {
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        Ok(Model {
            encoder: init_params(&spec, Net::Encoder, seed)?,
            decoder: init_params(&spec, Net::Decoder, seed)?,
            critic: init_params(&spec, Net::Critic, seed)?,
            spec,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec40() -> NetworkSpec {
        NetworkSpec::with_defaults(40, 32).unwrap()
    }

    fn rand_batch(b: usize, size: usize, seed: u64) -> Array4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn((b, 1, size, size), || rng.gen_range(0.0f32..1.0))
    }

    #[test]
    fn encode_shape_contract() {
        let spec = spec40();
        let params = init_params::<f32>(&spec, Net::Encoder, 7).unwrap();
        let codes = encode(&spec, &params, rand_batch(4, 40, 1).view()).unwrap();
        assert_eq!(codes.len(), 4);
        for code in &codes {
            assert_eq!(code.z.len(), 32);
            assert!(code.theta_hat.radians().is_finite());
        }
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_angle() {
        let spec = spec40();
        let params = init_params::<f32>(&spec, Net::Encoder, 3).unwrap();
        let batch = Array4::<f32>::zeros((2, 1, 40, 40));
        let codes = encode(&spec, &params, batch.view()).unwrap();
        for code in codes {
            assert_eq!(code.theta_hat.radians(), 0.0);
            assert!(code.z.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn encoder_output_depends_on_every_region() {
        // Finite-difference probe: tweaking one pixel moves the output.
        let spec = spec40();
        let params = init_params::<f32>(&spec, Net::Encoder, 11).unwrap();
        let base = rand_batch(1, 40, 2);
        let codes0 = encode(&spec, &params, base.view()).unwrap();
        let mut perturbed = base.clone();
        perturbed[[0, 0, 20, 20]] += 0.5;
        let codes1 = encode(&spec, &params, perturbed.view()).unwrap();
        assert_ne!(codes0, codes1);
    }

    #[test]
    fn decode_range_and_purity() {
        let spec = spec40();
        let params = init_params::<f32>(&spec, Net::Decoder, 5).unwrap();
        let mut z = Array2::<f32>::zeros((4, 32));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for v in z.iter_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        // Identical rows decode identically.
        let row = z.row(0).to_owned();
        z.row_mut(2).assign(&row);
        let out = decode(&spec, &params, z.view()).unwrap();
        assert_eq!(out.dim(), (4, 1, 40, 40));
        for &v in out.iter() {
            assert!(v > 0.0 && v < 1.0, "decoder output {v} outside (0, 1)");
        }
        let a = out.index_axis(ndarray::Axis(0), 0);
        let c = out.index_axis(ndarray::Axis(0), 2);
        assert_eq!(a, c);
    }

    #[test]
    fn decode_mirrors_mnist_sizes_too() {
        let spec = NetworkSpec::with_defaults(28, 16).unwrap();
        assert_eq!(spec.encoder_sizes().unwrap(), vec![28, 14, 7, 3, 1]);
        let params = init_params::<f32>(&spec, Net::Decoder, 1).unwrap();
        let z = Array2::<f32>::zeros((2, 16));
        let out = decode(&spec, &params, z.view()).unwrap();
        assert_eq!(out.dim(), (2, 1, 28, 28));
    }

    #[test]
    fn criticize_scores_finite_and_bounded_when_clipped() {
        let spec = spec40();
        let mut params = init_params::<f32>(&spec, Net::Critic, 13).unwrap();
        params.clip(0.01);
        assert!(params.max_abs() <= 0.01);
        let scores = criticize(&spec, &params, rand_batch(8, 40, 3).view()).unwrap();
        assert_eq!(scores.len(), 8);
        for &s in scores.iter() {
            assert!(s.is_finite());
            // Bounded-weight affine maps of bounded input cannot blow up.
            assert!(s.abs() < 1e6);
        }
    }

    #[test]
    fn split_latent_round_trip_and_guard() {
        let mut raw = Array2::<f32>::zeros((3, 33));
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for v in raw.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let codes = split_latent(raw.view(), 32).unwrap();
        assert_eq!(codes.len(), 3);
        assert_eq!(codes[0].z.len(), 32);
        // Concatenating theta and z restores the raw row bit-exactly.
        for (i, code) in codes.iter().enumerate() {
            assert_eq!(code.theta_hat.radians() as f32, raw[[i, 0]]);
            for (j, &v) in code.z.iter().enumerate() {
                assert_eq!(v, raw[[i, j + 1]]);
            }
        }
        let stacked = codes_to_content(&codes).unwrap();
        assert_eq!(stacked.dim(), (3, 32));

        let narrow = Array2::<f32>::zeros((3, 32));
        assert!(matches!(
            split_latent(narrow.view(), 32),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn spec_rejects_collapsing_input() {
        // 4 stride-2 layers need at least a 16 px input to keep 1 px alive.
        assert!(NetworkSpec::with_defaults(8, 8).is_err());
        assert!(NetworkSpec::with_defaults(16, 8).is_ok());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = spec40();
        let a = init_params::<f32>(&spec, Net::Encoder, 7).unwrap();
        let b = init_params::<f32>(&spec, Net::Encoder, 7).unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = init_params::<f32>(&spec, Net::Encoder, 8).unwrap();
        assert_ne!(a.digest(), c.digest());
        assert!(a.max_abs() <= 2.0 * INIT_STD as f32);
        // Biases start at zero.
        assert!(a.get("conv0.bias").unwrap().iter().all(|&v| v == 0.0));
    }
}
