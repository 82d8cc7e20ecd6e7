//! Test-set metrics and qualitative grids: average and worst-case per-image
//! MSE, angle error statistics, the echo-input baseline, and a PNG renderer
//! for (ground truth, input, reconstruction) panels.
//!
//! Metric reductions use pairwise summation and are insensitive to sample
//! order; repeated evaluation of the same checkpoint yields identical
//! reports.

use std::path::Path;

use ndarray::{Array4, Axis};

use crate::datasets::DatasetSplit;
use crate::error::{Error, Result};
use crate::imaging::{normalize, rotate_image, wrap_to_pi, Angle, Image, InterpMode};
use crate::model::{codes_to_content, decode, encode, Model};

/// Aggregate metrics over one split. MSE comes in both conventions: the
/// per-pixel mean and the per-image pixel sum (`per_pixel * H * W`).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub avg_mse_per_pixel: f64,
    pub avg_mse_pixel_sum: f64,
    pub worst_mse_per_pixel: f64,
    pub worst_index: usize,
    pub angle_mae: f64,
    pub angle_mse: f64,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub const CSV_HEADER: &'static str =
        "avg_mse_per_pixel,avg_mse_pixel_sum,worst_mse_per_pixel,worst_index,angle_mae,angle_mse,n_samples";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{:.9e},{:.9e},{:.9e},{},{:.9e},{:.9e},{}",
            self.avg_mse_per_pixel,
            self.avg_mse_pixel_sum,
            self.worst_mse_per_pixel,
            self.worst_index,
            self.angle_mae,
            self.angle_mse,
            self.n_samples
        )
    }
}

/// Stable sum: split in halves, add the parts.
fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => {
            let mid = n / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}

/// Index of the maximum, ties broken by the lowest index.
fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if v > values[b] => best = Some(i),
            _ => {}
        }
    }
    best
}

const EVAL_BATCH: usize = 256;

/// Per-sample forward pass results over a whole split.
struct EvalPass {
    /// Per-image mean squared error of reconstruction vs target.
    mse: Vec<f64>,
    /// Signed angle errors (wrapped when the corpus is circular).
    angle_err: Vec<f64>,
    /// Reconstructions, kept only when `keep_recons` is set.
    recons: Option<Vec<Image>>,
}

fn forward_pass(model: &Model, split: &DatasetSplit, keep_recons: bool) -> Result<EvalPass> {
    if split.is_empty() {
        return Err(Error::Argument("empty dataset split".into()));
    }
    let size = split.image_size()?;
    if size != model.spec.input_size {
        return Err(Error::Dimension(format!(
            "split images are {size} px but the checkpoint expects {}",
            model.spec.input_size
        )));
    }
    let circular = split.source_tag.circular_angles();
    let n = split.len();
    let mut mse = Vec::with_capacity(n);
    let mut angle_err = Vec::with_capacity(n);
    let mut recons = keep_recons.then(Vec::new);

    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        let b = end - start;
        let mut inputs = Array4::<f32>::zeros((b, 1, size, size));
        for (row, s) in split.samples[start..end].iter().enumerate() {
            inputs
                .index_axis_mut(Axis(0), row)
                .index_axis_mut(Axis(0), 0)
                .assign(s.input.pixels());
        }
        let codes = encode(&model.spec, &model.encoder, inputs.view())?;
        let z = codes_to_content(&codes)?;
        let xhat = decode(&model.spec, &model.decoder, z.view())?;

        for (row, s) in split.samples[start..end].iter().enumerate() {
            let sample_plane = xhat.index_axis(Axis(0), row);
            let recon = sample_plane.index_axis(Axis(0), 0);
            let target = s.target.pixels();
            let mut acc = 0.0f64;
            for (&r, &t) in recon.iter().zip(target.iter()) {
                let d = r as f64 - t as f64;
                acc += d * d;
            }
            mse.push(acc / (size * size) as f64);

            let predicted = codes[row].theta_hat.radians();
            let truth = s.theta.radians();
            let err = if circular {
                wrap_to_pi(predicted - truth)
            } else {
                predicted - truth
            };
            angle_err.push(err);

            if let Some(list) = recons.as_mut() {
                list.push(Image::new(recon.to_owned())?);
            }
        }
        start = end;
    }
    Ok(EvalPass {
        mse,
        angle_err,
        recons,
    })
}

/// Full metric sweep over a split.
pub fn evaluate(model: &Model, split: &DatasetSplit) -> Result<MetricsReport> {
    let pass = forward_pass(model, split, false)?;
    let size = split.image_size()?;
    let n = pass.mse.len();
    let avg = pairwise_sum(&pass.mse) / n as f64;
    let worst_index = argmax_first(&pass.mse).expect("non-empty");
    let abs_err: Vec<f64> = pass.angle_err.iter().map(|e| e.abs()).collect();
    let sq_err: Vec<f64> = pass.angle_err.iter().map(|e| e * e).collect();
    Ok(MetricsReport {
        avg_mse_per_pixel: avg,
        avg_mse_pixel_sum: avg * (size * size) as f64,
        worst_mse_per_pixel: pass.mse[worst_index],
        worst_index,
        angle_mae: pairwise_sum(&abs_err) / n as f64,
        angle_mse: pairwise_sum(&sq_err) / n as f64,
        n_samples: n,
    })
}

/// The sample the model reconstructs worst, with everything needed to render
/// it.
#[derive(Debug, Clone)]
pub struct WorstCase {
    pub index: usize,
    pub mse_per_pixel: f64,
    pub input: Image,
    pub target: Image,
    pub reconstruction: Image,
}

pub fn worst_case(model: &Model, split: &DatasetSplit) -> Result<WorstCase> {
    let pass = forward_pass(model, split, true)?;
    let index = argmax_first(&pass.mse).expect("non-empty");
    let recons = pass.recons.expect("requested");
    let s = &split.samples[index];
    Ok(WorstCase {
        index,
        mse_per_pixel: pass.mse[index],
        input: s.input.clone(),
        target: s.target.clone(),
        reconstruction: recons[index].clone(),
    })
}

/// Mean absolute and mean squared angle error over a split.
pub fn angle_error(model: &Model, split: &DatasetSplit) -> Result<(f64, f64)> {
    let pass = forward_pass(model, split, false)?;
    let n = pass.angle_err.len() as f64;
    let abs: Vec<f64> = pass.angle_err.iter().map(|e| e.abs()).collect();
    let sq: Vec<f64> = pass.angle_err.iter().map(|e| e * e).collect();
    Ok((pairwise_sum(&abs) / n, pairwise_sum(&sq) / n))
}

/// MSE of doing nothing: echo the input as the reconstruction. A trained
/// model must beat this.
pub fn echo_baseline(split: &DatasetSplit) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Argument("empty dataset split".into()));
    }
    let per: Vec<f64> = split
        .samples
        .iter()
        .map(|s| crate::imaging::mean_squared_error(&s.input, &s.target))
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&per) / per.len() as f64)
}

/// How tightly the reconstructions of one content cluster across rotated
/// copies of it.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CanonicalizationReport {
    /// Mean pairwise per-pixel MSE among reconstructions of the same image.
    pub mean_pairwise_mse: f64,
    /// Mean per-pixel MSE of those reconstructions against the canonical
    /// target.
    pub mean_recon_target_mse: f64,
    pub n_images: usize,
    pub n_angles: usize,
}

/// Rotates each image to every angle, reconstructs, and measures how much the
/// reconstructions of one image disagree among themselves versus against the
/// target. Canonicalization means the pairwise spread stays well below the
/// reconstruction error.
pub fn canonicalization(
    model: &Model,
    images: &[Image],
    angles: &[Angle],
) -> Result<CanonicalizationReport> {
    if images.is_empty() || angles.len() < 2 {
        return Err(Error::Argument(
            "need at least one image and two angles".into(),
        ));
    }
    let size = model.spec.input_size;
    let mut pairwise = Vec::new();
    let mut against_target = Vec::new();
    for img in images {
        if img.height() != size || img.width() != size {
            return Err(Error::Dimension(format!(
                "image is {}x{}, checkpoint expects {size}",
                img.height(),
                img.width()
            )));
        }
        let mut batch = Array4::<f32>::zeros((angles.len(), 1, size, size));
        for (row, &theta) in angles.iter().enumerate() {
            let rotated = normalize(&rotate_image(img, theta, InterpMode::Bilinear)?)?;
            batch
                .index_axis_mut(Axis(0), row)
                .index_axis_mut(Axis(0), 0)
                .assign(rotated.pixels());
        }
        let codes = encode(&model.spec, &model.encoder, batch.view())?;
        let z = codes_to_content(&codes)?;
        let recons = decode(&model.spec, &model.decoder, z.view())?;

        let px = (size * size) as f64;
        for a in 0..angles.len() {
            let plane_a = recons.index_axis(Axis(0), a);
            let ra = plane_a.index_axis(Axis(0), 0);
            let mut acc = 0.0f64;
            for (&r, &t) in ra.iter().zip(img.pixels().iter()) {
                let d = r as f64 - t as f64;
                acc += d * d;
            }
            against_target.push(acc / px);
            for b in (a + 1)..angles.len() {
                let plane_b = recons.index_axis(Axis(0), b);
                let rb = plane_b.index_axis(Axis(0), 0);
                let mut acc = 0.0f64;
                for (&x, &y) in ra.iter().zip(rb.iter()) {
                    let d = x as f64 - y as f64;
                    acc += d * d;
                }
                pairwise.push(acc / px);
            }
        }
    }
    Ok(CanonicalizationReport {
        mean_pairwise_mse: pairwise_sum(&pairwise) / pairwise.len() as f64,
        mean_recon_target_mse: pairwise_sum(&against_target) / against_target.len() as f64,
        n_images: images.len(),
        n_angles: angles.len(),
    })
}

/// One labeled row of a qualitative grid.
#[derive(Debug, Clone)]
pub struct GridRow {
    pub label: String,
    pub images: Vec<Image>,
}

const GUTTER: usize = 2;

/// Writes a grayscale PNG: one grid row per [`GridRow`], columns are samples,
/// 2-pixel white gutters, intensities mapped `[0,1] -> [0,255]` by rounding.
/// Identical inputs produce byte-identical files.
pub fn render_grid(rows: &[GridRow], path: &Path) -> Result<()> {
    let first = rows
        .first()
        .and_then(|r| r.images.first())
        .ok_or_else(|| Error::Argument("grid needs at least one image".into()))?;
    let (h, w) = (first.height(), first.width());
    let cols = rows[0].images.len();
    for row in rows {
        if row.images.len() != cols {
            return Err(Error::Dimension("grid rows have unequal lengths".into()));
        }
        for img in &row.images {
            if img.height() != h || img.width() != w {
                return Err(Error::Dimension("grid images have unequal sizes".into()));
            }
        }
    }

    let total_h = rows.len() * h + (rows.len() - 1) * GUTTER;
    let total_w = cols * w + (cols - 1) * GUTTER;
    let mut canvas = image::GrayImage::from_pixel(
        total_w as u32,
        total_h as u32,
        image::Luma([255u8]),
    );
    for (ri, row) in rows.iter().enumerate() {
        let oy = ri * (h + GUTTER);
        for (ci, img) in row.images.iter().enumerate() {
            let ox = ci * (w + GUTTER);
            for y in 0..h {
                for x in 0..w {
                    let v = (img.pixels()[[y, x]] as f64 * 255.0)
                        .round()
                        .clamp(0.0, 255.0) as u8;
                    canvas.put_pixel((ox + x) as u32, (oy + y) as u32, image::Luma([v]));
                }
            }
        }
    }
    canvas
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })
}

/// Builds the standard three-row grid (ground truth, input, reconstruction)
/// from the first `columns` samples of a split.
pub fn render_triplet_grid(
    model: &Model,
    split: &DatasetSplit,
    columns: usize,
    path: &Path,
) -> Result<()> {
    if columns == 0 || split.is_empty() {
        return Err(Error::Argument("grid needs at least one column".into()));
    }
    let columns = columns.min(split.len());
    let subset = DatasetSplit {
        samples: split.samples[..columns].to_vec(),
        split_tag: split.split_tag,
        source_tag: split.source_tag,
    };
    let pass = forward_pass(model, &subset, true)?;
    let recons = pass.recons.expect("requested");
    let rows = vec![
        GridRow {
            label: "ground truth".into(),
            images: subset.samples.iter().map(|s| s.target.clone()).collect(),
        },
        GridRow {
            label: "input".into(),
            images: subset.samples.iter().map(|s| s.input.clone()).collect(),
        },
        GridRow {
            label: "reconstruction".into(),
            images: recons,
        },
    ];
    render_grid(&rows, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_projection_stack, PhantomSpec, SplitTag};
    use crate::model::NetworkSpec;

    fn tiny_model() -> Model {
        Model::init(NetworkSpec::with_defaults(32, 8).unwrap(), 3).unwrap()
    }

    fn tiny_split(count: usize) -> DatasetSplit {
        let spec = PhantomSpec::random(7, 32, 0.05, 17);
        synth_projection_stack(&spec, count, SplitTag::Test, 11, 0).unwrap()
    }

    #[test]
    fn perfect_reconstruction_means_zero_mse() {
        // The per-image metric itself: recon == target gives exactly zero,
        // and a constant 0.5 against binary targets gives exactly 0.25.
        let mut target = Image::zeros(4, 4);
        let half = Image::from_shape_vec(4, 4, vec![0.5; 16]).unwrap();
        assert_eq!(
            crate::imaging::mean_squared_error(&target, &target).unwrap(),
            0.0
        );
        target = Image::from_shape_vec(4, 4, vec![0.0, 1.0].repeat(8)).unwrap();
        assert_eq!(
            crate::imaging::mean_squared_error(&half, &target).unwrap(),
            0.25
        );
    }

    #[test]
    fn report_invariants_hold() {
        let model = tiny_model();
        let split = tiny_split(9);
        let report = evaluate(&model, &split).unwrap();
        assert_eq!(report.n_samples, 9);
        assert!(report.worst_mse_per_pixel >= report.avg_mse_per_pixel);
        let ratio = report.avg_mse_pixel_sum / report.avg_mse_per_pixel;
        assert!((ratio - 1024.0).abs() < 1e-9);
        // Pure function: identical reports.
        assert_eq!(report, evaluate(&model, &split).unwrap());
    }

    #[test]
    fn evaluation_is_permutation_invariant() {
        let model = tiny_model();
        let split = tiny_split(8);
        let mut reversed = split.clone();
        reversed.samples.reverse();
        let a = evaluate(&model, &split).unwrap();
        let b = evaluate(&model, &reversed).unwrap();
        assert_eq!(a.avg_mse_per_pixel, b.avg_mse_per_pixel);
        assert_eq!(a.worst_mse_per_pixel, b.worst_mse_per_pixel);
        assert_eq!(a.worst_index, split.len() - 1 - b.worst_index);
    }

    #[test]
    fn worst_case_consistent_with_evaluate() {
        let model = tiny_model();
        let split = tiny_split(7);
        let report = evaluate(&model, &split).unwrap();
        let worst = worst_case(&model, &split).unwrap();
        assert_eq!(worst.index, report.worst_index);
        assert_eq!(worst.mse_per_pixel, report.worst_mse_per_pixel);
        assert_eq!(worst.target, split.samples[worst.index].target);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax_first(&[5.0]), Some(0));
        assert_eq!(argmax_first(&[]), None);
    }

    #[test]
    fn angle_error_hand_cases() {
        // Exact prediction and constant 0.5-rad error, on the wrapped stats.
        let errs = [0.5f64; 4];
        let abs: Vec<f64> = errs.iter().map(|e| e.abs()).collect();
        let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
        assert_eq!(pairwise_sum(&abs) / 4.0, 0.5);
        assert_eq!(pairwise_sum(&sq) / 4.0, 0.25);
        assert_eq!(pairwise_sum(&[0.0; 8]) / 8.0, 0.0);
    }

    #[test]
    fn echo_baseline_positive_for_rotated_data() {
        let split = tiny_split(6);
        let echo = echo_baseline(&split).unwrap();
        assert!(echo > 0.0);
    }

    #[test]
    fn canonicalization_report_shape() {
        let model = tiny_model();
        let split = tiny_split(3);
        let images: Vec<Image> = split.samples.iter().map(|s| s.target.clone()).collect();
        let angles: Vec<Angle> = (0..4)
            .map(|k| Angle::new(k as f64 * std::f64::consts::PI / 2.0).unwrap())
            .collect();
        let report = canonicalization(&model, &images, &angles).unwrap();
        assert_eq!(report.n_images, 3);
        assert_eq!(report.n_angles, 4);
        assert!(report.mean_pairwise_mse.is_finite());
        assert!(report.mean_recon_target_mse > 0.0);
    }

    #[test]
    fn grid_layout_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.png");
        let img = |v: f32| Image::from_shape_vec(40, 40, vec![v; 1600]).unwrap();
        let rows: Vec<GridRow> = (0..3)
            .map(|r| GridRow {
                label: format!("row{r}"),
                images: (0..8).map(|c| img(c as f32 / 7.0)).collect(),
            })
            .collect();
        render_grid(&rows, &path).unwrap();
        let decoded = image::open(&path).unwrap().to_luma8();
        assert_eq!(decoded.width(), (8 * 40 + 7 * 2) as u32);
        assert_eq!(decoded.height(), (3 * 40 + 2 * 2) as u32);
        // Endpoint mapping: first cell is 0.0 -> 0, last column is 1.0 -> 255.
        assert_eq!(decoded.get_pixel(0, 0).0[0], 0);
        assert_eq!(decoded.get_pixel(decoded.width() - 1, 0).0[0], 255);
        // Gutter pixel is white.
        assert_eq!(decoded.get_pixel(40, 0).0[0], 255);

        let path2 = dir.path().join("grid2.png");
        render_grid(&rows, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn triplet_grid_runs_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("triplet.png");
        let model = tiny_model();
        let split = tiny_split(5);
        render_triplet_grid(&model, &split, 4, &path).unwrap();
        let decoded = image::open(&path).unwrap().to_luma8();
        assert_eq!(decoded.width(), (4 * 32 + 3 * 2) as u32);
        assert_eq!(decoded.height(), (3 * 32 + 2 * 2) as u32);
    }

    #[test]
    fn size_mismatch_rejected() {
        let model = tiny_model();
        let spec = PhantomSpec::random(7, 40, 0.05, 17);
        let split = synth_projection_stack(&spec, 4, SplitTag::Test, 1, 0).unwrap();
        assert!(matches!(
            evaluate(&model, &split),
            Err(Error::Dimension(_))
        ));
    }
}
