//! Binary cache for built dataset splits.
//!
//! Layout (little-endian): magic `RIAE`, format version u32 = 1, source_tag
//! u8, split_tag u8, count u64, height u32, width u32; then per sample the
//! target pixels (f32 x H*W), input pixels (f32 x H*W) and theta (f64);
//! footer: CRC32 of all payload (per-sample) bytes.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::imaging::{Angle, Image};

use super::{DatasetSplit, LabeledSample, SourceTag, SplitTag};

const MAGIC: &[u8; 4] = b"RIAE";
const VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 1 + 1 + 8 + 4 + 4;

/// Writes a split to disk. Equal splits produce bit-identical files.
pub fn cache_dataset(split: &DatasetSplit, path: &Path) -> Result<()> {
    let (height, width) = match split.samples.first() {
        Some(s) => (s.target.height(), s.target.width()),
        None => return Err(Error::Argument("refusing to cache an empty split".into())),
    };
    for (i, s) in split.samples.iter().enumerate() {
        if s.target.height() != height
            || s.target.width() != width
            || s.input.height() != height
            || s.input.width() != width
        {
            return Err(Error::Dimension(format!(
                "sample {i} size differs from the split's {height}x{width}"
            )));
        }
    }

    let mut payload =
        Vec::with_capacity(split.len() * (2 * height * width * 4 + 8));
    for s in &split.samples {
        for &v in s.target.pixels().iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        for &v in s.input.pixels().iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        payload.extend_from_slice(&s.theta.radians().to_le_bytes());
    }
    let crc = crc32fast::hash(&payload);

    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&[split.source_tag.code(), split.split_tag.code()])
        .map_err(io_err)?;
    w.write_all(&(split.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(height as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(width as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&payload).map_err(io_err)?;
    w.write_all(&crc.to_le_bytes()).map_err(io_err)?;
    w.flush().map_err(io_err)?;
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
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

/// Loads a split written by [`cache_dataset`], verifying version, size and
/// checksum before decoding.
pub fn load_cache(path: &Path) -> Result<DatasetSplit> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };

    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("bad magic {magic:?}"),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            supported: VERSION,
        });
    }
    let source_code = r.u8()?;
    let split_code = r.u8()?;
    let count = r.u64()? as usize;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;

    let source_tag = SourceTag::from_code(source_code).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        detail: format!("unknown source tag {source_code}"),
    })?;
    let split_tag = SplitTag::from_code(split_code).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        detail: format!("unknown split tag {split_code}"),
    })?;

    let px = height
        .checked_mul(width)
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            detail: "image size overflow".into(),
        })?;
    let sample_len = 2 * px * 4 + 8;
    let expected_total = HEADER_LEN + (count as u64) * (sample_len as u64) + 4;
    if bytes.len() as u64 != expected_total {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: expected_total,
            actual: bytes.len() as u64,
        });
    }

    let payload = &bytes[HEADER_LEN as usize..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed_crc = crc32fast::hash(payload);
    if stored_crc != computed_crc {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            stored: stored_crc,
            computed: computed_crc,
        });
    }

    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let base = i * sample_len;
        let chunk = &payload[base..base + sample_len];
        let read_image = |off: usize| -> Result<Image> {
            let mut data = Vec::with_capacity(px);
            for k in 0..px {
                let b = &chunk[off + 4 * k..off + 4 * k + 4];
                data.push(f32::from_le_bytes(b.try_into().unwrap()));
            }
            Image::new(Array2::from_shape_vec((height, width), data).map_err(|e| {
                Error::Format {
                    path: path.to_path_buf(),
                    detail: format!("sample {i}: {e}"),
                }
            })?)
        };
        let target = read_image(0)?;
        let input = read_image(px * 4)?;
        let theta_bits = &chunk[2 * px * 4..];
        let theta = f64::from_le_bytes(theta_bits.try_into().unwrap());
        samples.push(LabeledSample {
            input,
            target,
            theta: Angle::new(theta)?,
        });
    }

    Ok(DatasetSplit {
        samples,
        split_tag,
        source_tag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_projection_stack, PhantomSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_split(seed: u64, count: usize) -> DatasetSplit {
        let spec = PhantomSpec::random(5, 32, 0.1, seed);
        synth_projection_stack(&spec, count, SplitTag::Test, seed, 0).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.riae");
        let split = small_split(3, 9);
        cache_dataset(&split, &path).unwrap();
        let loaded = load_cache(&path).unwrap();
        assert_eq!(split, loaded);
        // Writing twice produces identical bytes.
        let path2 = dir.path().join("split2.riae");
        cache_dataset(&split, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn detects_payload_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.riae");
        cache_dataset(&small_split(4, 5), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let idx = HEADER_LEN as usize + 37;
        bytes[idx] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_cache(&path), Err(Error::Checksum { .. })));
    }

    #[test]
    fn rejects_future_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.riae");
        cache_dataset(&small_split(5, 3), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&999u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_cache(&path) {
            Err(Error::Version { found, .. }) => assert_eq!(found, 999),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.riae");
        cache_dataset(&small_split(6, 4), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_cache(&path), Err(Error::Truncated { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn round_trip_random_splits(seed in 0u64..500, count in 1usize..6) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.riae");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let size = 6;
            let samples: Vec<LabeledSample> = (0..count).map(|_| {
                let img = |rng: &mut ChaCha8Rng| {
                    let data: Vec<f32> = (0..size * size).map(|_| rng.gen_range(0.0f32..1.0)).collect();
                    Image::from_shape_vec(size, size, data).unwrap()
                };
                LabeledSample {
                    input: img(&mut rng),
                    target: img(&mut rng),
                    theta: Angle::new(rng.gen_range(-10.0..10.0)).unwrap(),
                }
            }).collect();
            let split = DatasetSplit { samples, split_tag: SplitTag::Train, source_tag: SourceTag::RotatedMnist };
            cache_dataset(&split, &path).unwrap();
            prop_assert_eq!(load_cache(&path).unwrap(), split);
        }
    }
}
