//! Image geometry and normalization primitives.
//!
//! Everything here is a deterministic function of its inputs (plus the seed
//! where an rng is a parameter), so these routines are safe to call from many
//! threads at once.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// A grayscale image: `height x width` grid of finite `f32` intensities,
/// row-major. Normalized images live in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pixels: Array2<f32>,
}

impl Image {
    /// Wraps a pixel array, rejecting non-finite values.
    pub fn new(pixels: Array2<f32>) -> Result<Self> {
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("image contains non-finite pixels".into()));
        }
        Ok(Image { pixels })
    }

    pub fn from_shape_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let pixels = Array2::from_shape_vec((height, width), data)
            .map_err(|e| Error::Dimension(format!("bad image shape: {e}")))?;
        Image::new(pixels)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            pixels: Array2::zeros((height, width)),
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn pixels(&self) -> &Array2<f32> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f32> {
        self.pixels
    }

    pub fn is_square(&self) -> bool {
        self.height() == self.width() && self.height() > 0
    }
}

/// An angle in radians. Construction rejects non-finite values; the canonical
/// wrapped form lies in `[-pi, pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angle {
    radians: f64,
}

impl Angle {
    pub fn new(radians: f64) -> Result<Self> {
        if !radians.is_finite() {
            return Err(Error::Argument(format!("non-finite angle: {radians}")));
        }
        Ok(Angle { radians })
    }

    pub const ZERO: Angle = Angle { radians: 0.0 };

    pub fn radians(&self) -> f64 {
        self.radians
    }

    /// Canonical form in `[-pi, pi)`.
    pub fn wrapped(&self) -> Angle {
        Angle {
            radians: wrap_to_pi(self.radians),
        }
    }
}

impl fmt::Display for Angle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} rad", self.radians)
    }
}

/// Signed geodesic distance on the circle, in `[-pi, pi)`.
pub fn wrap_to_pi(d: f64) -> f64 {
    let w = d.sin().atan2(d.cos());
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Interpolation used when resampling a rotated grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum InterpMode {
    Nearest,
    /// Default everywhere in training.
    Bilinear,
}

/// Rotates a square image counterclockwise by `theta` about the exact grid
/// center `((w-1)/2, (h-1)/2)`, resampling with the requested interpolation.
/// Sample taps that fall outside the source support contribute zero.
///
/// Counterclockwise is meant visually, with row 0 displayed at the top: at
/// `theta = pi/2` the result equals the transpose-then-reverse-rows index
/// permutation of the input, exactly, in nearest mode.
pub fn rotate_image(img: &Image, theta: Angle, mode: InterpMode) -> Result<Image> {
    if !img.is_square() {
        return Err(Error::Dimension(format!(
            "rotation requires a non-empty square image, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    let n = img.height();
    let src = img.pixels();
    let c = (n as f64 - 1.0) / 2.0;
    let (sin_t, cos_t) = theta.radians().sin_cos();
    let max_idx = n as f64 - 1.0;

    let mut out = Array2::<f32>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            // Inverse map: destination offset rotated by -theta.
            let dx = j as f64 - c;
            let dy = i as f64 - c;
            let sx = cos_t * dx - sin_t * dy + c;
            let sy = sin_t * dx + cos_t * dy + c;

            let v = match mode {
                InterpMode::Nearest => {
                    let xr = sx.round();
                    let yr = sy.round();
                    if xr < 0.0 || xr > max_idx || yr < 0.0 || yr > max_idx {
                        0.0
                    } else {
                        src[[yr as usize, xr as usize]]
                    }
                }
                InterpMode::Bilinear => {
                    let x0 = sx.floor();
                    let y0 = sy.floor();
                    let fx = sx - x0;
                    let fy = sy - y0;
                    let mut acc = 0.0f64;
                    for (di, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                        for (dj, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                            let xs = x0 + dj;
                            let ys = y0 + di;
                            if xs >= 0.0 && xs <= max_idx && ys >= 0.0 && ys <= max_idx {
                                acc += wy * wx * src[[ys as usize, xs as usize]] as f64;
                            }
                        }
                    }
                    acc as f32
                }
            };
            out[[i, j]] = v;
        }
    }
    Image::new(out)
}

/// Distribution an input rotation is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum AngleDistribution {
    /// Gaussian in radians.
    Normal { mean: f64, std: f64 },
    /// Uniform over `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
}

impl AngleDistribution {
    /// `Normal(0, pi^2/16)`: the rotated-MNIST protocol.
    pub fn mnist() -> Self {
        AngleDistribution::Normal {
            mean: 0.0,
            std: PI / 4.0,
        }
    }

    /// `Uniform[0, 2pi)`: full-circle rotations for projection stacks.
    pub fn full_circle() -> Self {
        AngleDistribution::Uniform {
            lo: 0.0,
            hi: 2.0 * PI,
        }
    }

    /// Whether angle comparisons under this distribution should use the
    /// wrapped circle distance.
    pub fn is_circular(&self) -> bool {
        matches!(self, AngleDistribution::Uniform { lo, hi } if (hi - lo - 2.0 * PI).abs() < 1e-9)
    }
}

impl FromStr for AngleDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(args) = s
            .strip_prefix("normal(")
            .and_then(|r| r.strip_suffix(')'))
        {
            let (m, sd) = parse_pair(args)?;
            return Ok(AngleDistribution::Normal { mean: m, std: sd });
        }
        if let Some(args) = s
            .strip_prefix("uniform(")
            .and_then(|r| r.strip_suffix(')'))
        {
            let (lo, hi) = parse_pair(args)?;
            return Ok(AngleDistribution::Uniform { lo, hi });
        }
        match s {
            "normal" => Ok(AngleDistribution::mnist()),
            "uniform" => Ok(AngleDistribution::full_circle()),
            other => Err(Error::Config(format!(
                "unknown angle distribution tag: {other:?} (expected normal, uniform, normal(m,s) or uniform(a,b))"
            ))),
        }
    }
}

fn parse_pair(args: &str) -> Result<(f64, f64)> {
    let mut it = args.split(',').map(str::trim);
    let a = it.next().and_then(|v| v.parse::<f64>().ok());
    let b = it.next().and_then(|v| v.parse::<f64>().ok());
    match (a, b, it.next()) {
        (Some(a), Some(b), None) if a.is_finite() && b.is_finite() => Ok((a, b)),
        _ => Err(Error::Config(format!(
            "bad angle distribution arguments: {args:?}"
        ))),
    }
}

/// Draws one rotation angle. Equal seeds give equal sequences.
pub fn sample_angle<R: Rng + ?Sized>(dist: AngleDistribution, rng: &mut R) -> Angle {
    let radians = match dist {
        AngleDistribution::Normal { mean, std } => {
            let normal = Normal::new(mean, std).expect("finite normal parameters");
            normal.sample(rng)
        }
        AngleDistribution::Uniform { lo, hi } => rng.gen_range(lo..hi),
    };
    Angle { radians }
}

/// Affine per-image min-max map onto `[0, 1]`. Constant images map to all
/// zeros: they carry no structure, and this avoids a zero division.
pub fn normalize(img: &Image) -> Result<Image> {
    let src = img.pixels();
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in src.iter() {
        if !v.is_finite() {
            return Err(Error::Data("normalize: non-finite pixel".into()));
        }
        min = min.min(v);
        max = max.max(v);
    }
    if src.is_empty() || min == max {
        return Ok(Image::zeros(img.height(), img.width()));
    }
    let range = max - min;
    let out = src.mapv(|v| (v - min) / range);
    Image::new(out)
}

/// Per-pixel mean squared error between two images of equal size.
pub fn mean_squared_error(a: &Image, b: &Image) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Dimension(format!(
            "image size mismatch: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    if a.pixels().is_empty() {
        return Err(Error::Argument("empty image".into()));
    }
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels().iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.pixels().len() as f64)
}

/// Mean absolute difference restricted to the disk of the given radius about
/// the grid center. Used to measure interpolation round-trip error away from
/// the corners that rotation necessarily clips.
pub fn mean_abs_on_disk(a: &Image, b: &Image, radius: f64) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Dimension(format!(
            "image size mismatch: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let cy = (a.height() as f64 - 1.0) / 2.0;
    let cx = (a.width() as f64 - 1.0) / 2.0;
    let r2 = radius * radius;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for i in 0..a.height() {
        for j in 0..a.width() {
            let dy = i as f64 - cy;
            let dx = j as f64 - cx;
            if dy * dy + dx * dx <= r2 {
                sum += (a.pixels()[[i, j]] as f64 - b.pixels()[[i, j]] as f64).abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Argument("disk contains no pixels".into()));
    }
    Ok(sum / count as f64)
}

/// Band-limited synthetic test pattern in `[0, 1]`: a few low-frequency
/// sinusoids over the grid. Smooth enough that rotation round-trips are
/// meaningful accuracy probes.
pub fn smooth_test_image(size: usize, seed: u64) -> Image {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n_waves = 4;
    let waves: Vec<(f64, f64, f64, f64)> = (0..n_waves)
        .map(|_| {
            (
                rng.gen_range(-3.0f64..3.0),
                rng.gen_range(-3.0f64..3.0),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.5f64..1.0),
            )
        })
        .collect();
    let mut pixels = Array2::<f32>::zeros((size, size));
    for i in 0..size {
        for j in 0..size {
            let x = j as f64 / size as f64;
            let y = i as f64 / size as f64;
            let mut v = 0.0;
            for &(u, w, phase, amp) in &waves {
                v += amp * (2.0 * PI * (u * x + w * y) + phase).sin();
            }
            pixels[[i, j]] = v as f32;
        }
    }
    normalize(&Image::new(pixels).expect("finite")).expect("finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(size: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..size * size).map(|_| rng.gen_range(0.0..1.0)).collect();
        Image::from_shape_vec(size, size, data).unwrap()
    }

    /// Independent oracle: one 90-degree counterclockwise step is transpose
    /// followed by reversing the row order.
    fn rot90_oracle(img: &Image, k: usize) -> Image {
        let mut cur = img.pixels().clone();
        for _ in 0..k {
            let n = cur.nrows();
            let mut next = Array2::<f32>::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    next[[i, j]] = cur[[j, n - 1 - i]];
                }
            }
            cur = next;
        }
        Image::new(cur).unwrap()
    }

    #[test]
    fn rotate_zero_is_identity_bit_exact() {
        let img = random_image(17, 3);
        for mode in [InterpMode::Nearest, InterpMode::Bilinear] {
            let out = rotate_image(&img, Angle::ZERO, mode).unwrap();
            assert_eq!(out.pixels(), img.pixels());
        }
    }

    #[test]
    fn rotate_quarter_turns_match_permutation_oracle() {
        for &size in &[8usize, 9, 28] {
            let img = random_image(size, size as u64);
            for k in 1..4usize {
                let theta = Angle::new(k as f64 * PI / 2.0).unwrap();
                let got = rotate_image(&img, theta, InterpMode::Nearest).unwrap();
                let want = rot90_oracle(&img, k);
                assert_eq!(got.pixels(), want.pixels(), "size {size}, k {k}");
            }
        }
    }

    #[test]
    fn rotate_round_trip_small_error_on_disk() {
        let size = 40;
        let img = smooth_test_image(size, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let theta = Angle::new(rng.gen_range(-PI..=PI)).unwrap();
            let fwd = rotate_image(&img, theta, InterpMode::Bilinear).unwrap();
            let back = rotate_image(
                &fwd,
                Angle::new(-theta.radians()).unwrap(),
                InterpMode::Bilinear,
            )
            .unwrap();
            let err = mean_abs_on_disk(&img, &back, size as f64 / 2.0 - 2.0).unwrap();
            assert!(err <= 0.02, "round-trip error {err} at theta {theta}");
        }
    }

    #[test]
    fn rotate_rejects_bad_shapes() {
        let img = Image::from_shape_vec(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(
            rotate_image(&img, Angle::ZERO, InterpMode::Bilinear),
            Err(Error::Dimension(_))
        ));
        let empty = Image::zeros(0, 0);
        assert!(rotate_image(&empty, Angle::ZERO, InterpMode::Bilinear).is_err());
    }

    #[test]
    fn normalize_min_max_cases() {
        let img = Image::from_shape_vec(1, 3, vec![2.0, 4.0, 6.0]).unwrap();
        let out = normalize(&img).unwrap();
        assert_eq!(out.pixels().as_slice().unwrap(), &[0.0, 0.5, 1.0]);

        let constant = Image::from_shape_vec(2, 2, vec![3.0; 4]).unwrap();
        let out = normalize(&constant).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_idempotent() {
        let img = random_image(12, 9);
        let once = normalize(&img).unwrap();
        let twice = normalize(&once).unwrap();
        assert_eq!(once.pixels(), twice.pixels());
    }

    #[test]
    fn normalize_rejects_non_finite() {
        let arr = Array2::from_shape_vec((1, 2), vec![0.0, f32::NAN]).unwrap();
        let img = Image { pixels: arr };
        assert!(matches!(normalize(&img), Err(Error::Data(_))));
    }

    #[test]
    fn sample_angle_normal_std_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let dist = AngleDistribution::mnist();
        let samples: Vec<f64> = (0..n)
            .map(|_| sample_angle(dist, &mut rng).radians())
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        let target = PI / 4.0;
        assert!(
            (std - target).abs() / target < 0.01,
            "sample std {std} vs {target}"
        );
    }

    #[test]
    fn sample_angle_uniform_mean_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let dist = AngleDistribution::full_circle();
        let mean = (0..n)
            .map(|_| sample_angle(dist, &mut rng).radians())
            .sum::<f64>()
            / n as f64;
        assert!((mean - PI).abs() / PI < 0.02, "sample mean {mean}");
    }

    #[test]
    fn sample_angle_deterministic_per_seed() {
        let dist = AngleDistribution::full_circle();
        let draw = |seed: u64| -> Vec<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..32).map(|_| sample_angle(dist, &mut rng).radians()).collect()
        };
        assert_eq!(draw(123), draw(123));
        assert_ne!(draw(123), draw(124));
    }

    #[test]
    fn distribution_tag_parsing() {
        assert_eq!(
            "normal".parse::<AngleDistribution>().unwrap(),
            AngleDistribution::mnist()
        );
        assert_eq!(
            "uniform".parse::<AngleDistribution>().unwrap(),
            AngleDistribution::full_circle()
        );
        assert_eq!(
            "normal(0.5, 0.25)".parse::<AngleDistribution>().unwrap(),
            AngleDistribution::Normal {
                mean: 0.5,
                std: 0.25
            }
        );
        assert!(matches!(
            "vonmises".parse::<AngleDistribution>(),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn wrap_to_pi_range_and_values() {
        assert!((wrap_to_pi(0.1 - (2.0 * PI - 0.1)) - 0.2).abs() < 1e-12);
        for d in [-10.0, -PI, 0.0, PI, 10.0, 100.0] {
            let w = wrap_to_pi(d);
            assert!((-PI..PI).contains(&w), "wrap({d}) = {w}");
        }
    }

    proptest! {
        #[test]
        fn rotate_preserves_shape_and_bounds(seed in 0u64..1000, theta in -10.0f64..10.0) {
            let img = random_image(11, seed);
            let out = rotate_image(&img, Angle::new(theta).unwrap(), InterpMode::Bilinear).unwrap();
            prop_assert_eq!(out.height(), 11);
            prop_assert_eq!(out.width(), 11);
            let min = img.pixels().iter().cloned().fold(f32::INFINITY, f32::min).min(0.0);
            let max = img.pixels().iter().cloned().fold(f32::NEG_INFINITY, f32::max).max(0.0);
            for &v in out.pixels().iter() {
                prop_assert!(v >= min - 1e-5 && v <= max + 1e-5, "value {} outside [{}, {}]", v, min, max);
            }
        }

        #[test]
        fn normalize_output_in_unit_range(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..64).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let img = Image::from_shape_vec(8, 8, data).unwrap();
            let out = normalize(&img).unwrap();
            for &v in out.pixels().iter() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
