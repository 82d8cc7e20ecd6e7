//! Training corpora: rotated MNIST-style stacks and a synthetic projection
//! stack, each sample carrying (rotated noisy input, canonical clean target,
//! ground-truth angle), plus a binary cache format for built datasets.

mod cache;
mod glyphs;
mod idx;

pub use cache::{cache_dataset, load_cache};
pub use glyphs::glyph_stack;
pub use idx::{load_idx, IdxFile};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{derived_rng, domain as rng_domain};
use crate::imaging::{
    mean_squared_error, normalize, rotate_image, sample_angle, Angle, AngleDistribution, Image,
    InterpMode,
};

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    /// Rotated (and possibly noisy) observation.
    pub input: Image,
    /// Canonical clean image the model should reconstruct.
    pub target: Image,
    /// Ground-truth rotation applied to produce `input`.
    pub theta: Angle,
}

impl LabeledSample {
    fn check_invariants(&self) -> Result<()> {
        if self.input.height() != self.target.height()
            || self.input.width() != self.target.width()
        {
            return Err(Error::Validation(
                "sample input/target dimensions differ".into(),
            ));
        }
        let in_range = |img: &Image| img.pixels().iter().all(|&v| (0.0..=1.0).contains(&v));
        if !in_range(&self.input) || !in_range(&self.target) {
            return Err(Error::Validation(
                "sample pixels outside [0, 1] after normalization".into(),
            ));
        }
        Ok(())
    }
}

/// Which corpus a split was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SourceTag {
    RotatedMnist,
    Synth5hdb,
}

impl SourceTag {
    pub(crate) fn code(self) -> u8 {
        match self {
            SourceTag::RotatedMnist => 0,
            SourceTag::Synth5hdb => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SourceTag::RotatedMnist),
            1 => Some(SourceTag::Synth5hdb),
            _ => None,
        }
    }

    /// Angle distribution the corpus draws rotations from.
    pub fn angle_distribution(self) -> AngleDistribution {
        match self {
            SourceTag::RotatedMnist => AngleDistribution::mnist(),
            SourceTag::Synth5hdb => AngleDistribution::full_circle(),
        }
    }

    /// Whether angle errors on this corpus should use the wrapped circle
    /// distance (uniform full-circle rotations) or the raw difference.
    pub fn circular_angles(self) -> bool {
        self.angle_distribution().is_circular()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SplitTag {
    Train,
    Test,
}

impl SplitTag {
    pub(crate) fn code(self) -> u8 {
        match self {
            SplitTag::Train => 0,
            SplitTag::Test => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SplitTag::Train),
            1 => Some(SplitTag::Test),
            _ => None,
        }
    }
}

/// An ordered collection of samples from one corpus split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub samples: Vec<LabeledSample>,
    pub split_tag: SplitTag,
    pub source_tag: SourceTag,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Image side length, assuming a non-empty split of square images.
    pub fn image_size(&self) -> Result<usize> {
        let first = self
            .samples
            .first()
            .ok_or_else(|| Error::Argument("empty dataset split".into()))?;
        Ok(first.target.height())
    }
}

/// Builds a rotated corpus from raw canonical images: each sample's input is
/// the image rotated by an angle drawn from `Normal(0, pi^2/16)`, and the
/// target is the original image. Deterministic per `(seed, index)`.
pub fn build_rotated_mnist(
    raw: &[Image],
    split_tag: SplitTag,
    seed: u64,
) -> Result<DatasetSplit> {
    if raw.is_empty() {
        return Err(Error::Argument("no raw images supplied".into()));
    }
    for (i, img) in raw.iter().enumerate() {
        if !img.is_square() {
            return Err(Error::Dimension(format!(
                "raw image {i} is {}x{}, expected square",
                img.height(),
                img.width()
            )));
        }
        if img.pixels().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Data(format!("raw image {i} has pixels outside [0, 1]")));
        }
    }
    let dist = AngleDistribution::mnist();
    let samples: Vec<LabeledSample> = raw
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = derived_rng(rng_domain::SAMPLE, seed, i as u64);
            let theta = sample_angle(dist, &mut rng);
            let input = rotate_image(img, theta, InterpMode::Bilinear)?;
            Ok(LabeledSample {
                input,
                target: img.clone(),
                theta,
            })
        })
        .collect::<Result<_>>()?;
    let split = DatasetSplit {
        samples,
        split_tag,
        source_tag: SourceTag::RotatedMnist,
    };
    validate_subset(&split, seed)?;
    Ok(split)
}

/// Procedural stand-in for a simulated projection stack: a sum of Gaussian
/// blobs with a hard rotational-asymmetry requirement, so the global rotation
/// of every projection stays identifiable.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhantomSpec {
    /// Per-blob (center_x, center_y) in pixels, amplitude, isotropic std in pixels.
    pub blob_params: Vec<(f64, f64, f64, f64)>,
    pub image_size: usize,
    /// Std of the additive Gaussian noise, on the normalized intensity scale.
    pub noise_std: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Draws `blob_count` blobs inside the central disk so rotations keep the
    /// support inside the frame.
    pub fn random(blob_count: usize, image_size: usize, noise_std: f64, seed: u64) -> Self {
        let mut rng = derived_rng(rng_domain::PHANTOM, seed, 0);
        let c = (image_size as f64 - 1.0) / 2.0;
        let max_r = 0.35 * image_size as f64;
        let blob_params = (0..blob_count)
            .map(|_| {
                let r = max_r * rng.gen_range(0.0f64..1.0).sqrt();
                let phi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                let cx = c + r * phi.cos();
                let cy = c + r * phi.sin();
                let amp = rng.gen_range(0.4..1.0);
                let std = rng.gen_range(0.04 * image_size as f64..0.10 * image_size as f64);
                (cx, cy, amp, std)
            })
            .collect();
        PhantomSpec {
            blob_params,
            image_size,
            noise_std,
            seed,
        }
    }

    /// The default 40x40, 7-blob phantom.
    pub fn default_40() -> Self {
        PhantomSpec::random(7, 40, 0.1, 17)
    }

    pub fn blob_count(&self) -> usize {
        self.blob_params.len()
    }

    /// Renders the canonical phantom: Gaussian blobs summed on the grid, then
    /// min-max normalized.
    pub fn render(&self) -> Result<Image> {
        if self.blob_params.is_empty() || self.image_size == 0 {
            return Err(Error::Validation("phantom needs blobs and a size".into()));
        }
        let n = self.image_size;
        let mut pixels = Array2::<f32>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0f64;
                for &(cx, cy, amp, std) in &self.blob_params {
                    let dx = j as f64 - cx;
                    let dy = i as f64 - cy;
                    v += amp * (-(dx * dx + dy * dy) / (2.0 * std * std)).exp();
                }
                pixels[[i, j]] = v as f32;
            }
        }
        normalize(&Image::new(pixels)?)
    }

    /// Checks rotational asymmetry of the rendered phantom: the smallest MSE
    /// against any rotated copy (64-angle grid, quarter turns included) must
    /// exceed ten times the interpolation round-trip error, otherwise the
    /// per-sample angle is unidentifiable.
    pub fn validate_asymmetry(&self, phantom: &Image) -> Result<()> {
        let grid = 64usize;
        let mut min_symmetry = f64::INFINITY;
        let mut max_round_trip = 0.0f64;
        for k in 1..grid {
            let theta = Angle::new(k as f64 * 2.0 * std::f64::consts::PI / grid as f64)?;
            let rotated = rotate_image(phantom, theta, InterpMode::Bilinear)?;
            let back = rotate_image(&rotated, Angle::new(-theta.radians())?, InterpMode::Bilinear)?;
            min_symmetry = min_symmetry.min(mean_squared_error(phantom, &rotated)?);
            max_round_trip = max_round_trip.max(mean_squared_error(phantom, &back)?);
        }
        if min_symmetry <= 10.0 * max_round_trip {
            return Err(Error::Validation(format!(
                "phantom too rotationally symmetric: min rotated MSE {min_symmetry:.3e} \
                 vs round-trip error {max_round_trip:.3e}"
            )));
        }
        Ok(())
    }
}

fn synth_sample(
    phantom: &Image,
    theta: Angle,
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledSample> {
    let rotated = rotate_image(phantom, theta, InterpMode::Bilinear)?;
    let noisy = if noise_std > 0.0 {
        let normal = rand_distr::Normal::new(0.0f64, noise_std)
            .map_err(|e| Error::Config(format!("bad noise std: {e}")))?;
        let pixels = rotated
            .pixels()
            .mapv(|v| (v as f64 + rand_distr::Distribution::sample(&normal, rng)) as f32);
        Image::new(pixels)?
    } else {
        rotated
    };
    Ok(LabeledSample {
        input: normalize(&noisy)?,
        target: phantom.clone(),
        theta,
    })
}

/// Builds `count` projections of the phantom: per sample, a uniform rotation
/// over the full circle plus additive Gaussian noise, normalized back onto
/// `[0, 1]`. `start_index` offsets the per-sample rng streams so train and
/// test splits built from the same seed stay disjoint.
pub fn synth_projection_stack(
    spec: &PhantomSpec,
    count: usize,
    split_tag: SplitTag,
    seed: u64,
    start_index: u64,
) -> Result<DatasetSplit> {
    let phantom = spec.render()?;
    spec.validate_asymmetry(&phantom)?;
    let dist = AngleDistribution::full_circle();
    let samples: Vec<LabeledSample> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(rng_domain::SAMPLE, seed, start_index + i as u64);
            let theta = sample_angle(dist, &mut rng);
            synth_sample(&phantom, theta, spec.noise_std, &mut rng)
        })
        .collect::<Result<_>>()?;
    let split = DatasetSplit {
        samples,
        split_tag,
        source_tag: SourceTag::Synth5hdb,
    };
    validate_subset(&split, seed)?;
    Ok(split)
}

/// Re-rotates the clean targets of a split with fresh per-epoch angles; the
/// augmentation variant of the build-time rotation policy.
pub fn re_rotate_split(split: &DatasetSplit, seed: u64, epoch: u64, noise_std: f64) -> Result<DatasetSplit> {
    let dist = split.source_tag.angle_distribution();
    let samples: Vec<LabeledSample> = split
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = derived_rng(
                rng_domain::SAMPLE,
                seed ^ (epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15)),
                i as u64,
            );
            let theta = sample_angle(dist, &mut rng);
            match split.source_tag {
                SourceTag::Synth5hdb => synth_sample(&s.target, theta, noise_std, &mut rng),
                SourceTag::RotatedMnist => {
                    let input = rotate_image(&s.target, theta, InterpMode::Bilinear)?;
                    Ok(LabeledSample {
                        input,
                        target: s.target.clone(),
                        theta,
                    })
                }
            }
        })
        .collect::<Result<_>>()?;
    Ok(DatasetSplit {
        samples,
        split_tag: split.split_tag,
        source_tag: split.source_tag,
    })
}

/// Validation pass over a random 1% subset (at least one sample).
fn validate_subset(split: &DatasetSplit, seed: u64) -> Result<()> {
    if split.is_empty() {
        return Err(Error::Validation("dataset split is empty".into()));
    }
    let n = split.len();
    let checks = (n / 100).max(1);
    let mut rng = derived_rng(rng_domain::VALIDATE, seed, n as u64);
    for _ in 0..checks {
        let idx = rng.gen_range(0..n);
        split.samples[idx].check_invariants()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derived_rng, domain as rng_domain};
use crate::imaging::{mean_abs_on_disk, smooth_test_image};
    use std::f64::consts::PI;

    #[test]
    fn rotated_build_is_deterministic() {
        let raw: Vec<Image> = (0..8).map(|i| smooth_test_image(12, i)).collect();
        let a = build_rotated_mnist(&raw, SplitTag::Train, 5).unwrap();
        let b = build_rotated_mnist(&raw, SplitTag::Train, 5).unwrap();
        assert_eq!(a, b);
        let c = build_rotated_mnist(&raw, SplitTag::Train, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rotated_sample_unrotates_to_target() {
        let raw: Vec<Image> = (0..6).map(|i| smooth_test_image(24, 100 + i)).collect();
        let split = build_rotated_mnist(&raw, SplitTag::Train, 9).unwrap();
        for s in &split.samples {
            let back = rotate_image(
                &s.input,
                Angle::new(-s.theta.radians()).unwrap(),
                InterpMode::Bilinear,
            )
            .unwrap();
            let err = mean_abs_on_disk(&back, &s.target, 24.0 / 2.0 - 2.0).unwrap();
            assert!(err <= 0.02, "round-trip error {err}");
        }
    }

    #[test]
    fn rotated_angles_follow_gaussian_tail() {
        // P(|theta| > pi/2) for Normal(0, pi^2/16) is 2*Phi(-2) ~ 0.0455.
        let raw: Vec<Image> = (0..10_000).map(|_| Image::zeros(4, 4)).collect();
        let split = build_rotated_mnist(&raw, SplitTag::Train, 3).unwrap();
        let frac = split
            .samples
            .iter()
            .filter(|s| s.theta.radians().abs() > PI / 2.0)
            .count() as f64
            / split.len() as f64;
        assert!((frac - 0.0455).abs() <= 0.02, "tail fraction {frac}");
    }

    #[test]
    fn default_phantom_is_asymmetric() {
        let spec = PhantomSpec::default_40();
        let phantom = spec.render().unwrap();
        spec.validate_asymmetry(&phantom).unwrap();
        assert_eq!(phantom.height(), 40);
        // Deterministic render.
        assert_eq!(phantom, spec.render().unwrap());
    }

    #[test]
    fn symmetric_phantom_rejected() {
        let n = 40.0;
        let spec = PhantomSpec {
            blob_params: vec![((n - 1.0) / 2.0, (n - 1.0) / 2.0, 1.0, 4.0)],
            image_size: 40,
            noise_std: 0.0,
            seed: 0,
        };
        let phantom = spec.render().unwrap();
        assert!(matches!(
            spec.validate_asymmetry(&phantom),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            synth_projection_stack(&spec, 4, SplitTag::Train, 0, 0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn synth_sample_noiseless_identity() {
        let spec = PhantomSpec::default_40();
        let phantom = spec.render().unwrap();
        let mut rng = derived_rng(rng_domain::SAMPLE, 0, 0);
        let s = synth_sample(&phantom, Angle::ZERO, 0.0, &mut rng).unwrap();
        assert_eq!(s.input.pixels(), s.target.pixels());
    }

    #[test]
    fn synth_stack_geometry_and_disjoint_streams() {
        let spec = PhantomSpec::random(7, 32, 0.1, 17);
        let train = synth_projection_stack(&spec, 32, SplitTag::Train, 7, 0).unwrap();
        let test = synth_projection_stack(&spec, 8, SplitTag::Test, 7, 32).unwrap();
        assert_eq!(train.len(), 32);
        assert_eq!(test.len(), 8);
        assert_eq!(train.image_size().unwrap(), 32);
        // Disjoint index ranges give different rotation streams.
        assert_ne!(train.samples[0].theta, test.samples[0].theta);
        // Same build twice is bit-identical.
        let again = synth_projection_stack(&spec, 32, SplitTag::Train, 7, 0).unwrap();
        assert_eq!(train, again);
    }

    #[test]
    fn re_rotation_changes_inputs_keeps_targets() {
        let spec = PhantomSpec::random(5, 32, 0.05, 2);
        let split = synth_projection_stack(&spec, 8, SplitTag::Train, 1, 0).unwrap();
        let epoch1 = re_rotate_split(&split, 1, 1, spec.noise_std).unwrap();
        let epoch2 = re_rotate_split(&split, 1, 2, spec.noise_std).unwrap();
        assert_eq!(epoch1.samples[0].target, split.samples[0].target);
        assert_ne!(epoch1.samples[0].theta, epoch2.samples[0].theta);
        assert_eq!(
            re_rotate_split(&split, 1, 1, spec.noise_std).unwrap(),
            epoch1
        );
    }
}
