//! Procedural digit-like glyph corpus: soft-stroke shapes on a dark field,
//! in the 28x28 MNIST geometry. A drop-in stand-in for the raw digit images
//! when no IDX files are at hand (demos, tests, desk-scale training runs).

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use crate::imaging::{normalize, Image};

use crate::rng::{derived_rng, domain as rng_domain};

type Seg = ((f64, f64), (f64, f64));

/// Stroke templates in unit coordinates (x right, y down), one per class.
/// Loops are closed polygons, the rest are open polylines.
fn template(class: usize) -> Vec<Seg> {
    let poly = |pts: &[(f64, f64)], closed: bool| -> Vec<Seg> {
        let mut segs = Vec::new();
        for w in pts.windows(2) {
            segs.push((w[0], w[1]));
        }
        if closed {
            segs.push((*pts.last().unwrap(), pts[0]));
        }
        segs
    };
    let ring = |cx: f64, cy: f64, rx: f64, ry: f64| -> Vec<Seg> {
        let pts: Vec<(f64, f64)> = (0..10)
            .map(|k| {
                let a = k as f64 / 10.0 * std::f64::consts::TAU;
                (cx + rx * a.cos(), cy + ry * a.sin())
            })
            .collect();
        poly(&pts, true)
    };
    match class % 10 {
        0 => ring(0.5, 0.5, 0.22, 0.30),
        1 => poly(&[(0.42, 0.28), (0.52, 0.20), (0.52, 0.80)], false),
        2 => poly(
            &[(0.30, 0.32), (0.45, 0.20), (0.65, 0.30), (0.60, 0.45), (0.30, 0.78), (0.70, 0.78)],
            false,
        ),
        3 => poly(
            &[(0.32, 0.24), (0.62, 0.28), (0.45, 0.48), (0.66, 0.58), (0.58, 0.78), (0.32, 0.76)],
            false,
        ),
        4 => poly(&[(0.60, 0.80), (0.60, 0.20), (0.30, 0.58), (0.72, 0.58)], false),
        5 => poly(
            &[(0.66, 0.22), (0.34, 0.22), (0.32, 0.48), (0.60, 0.46), (0.66, 0.66), (0.34, 0.78)],
            false,
        ),
        6 => {
            let mut segs = poly(&[(0.60, 0.20), (0.38, 0.42), (0.34, 0.62)], false);
            segs.extend(ring(0.48, 0.64, 0.15, 0.14));
            segs
        }
        7 => poly(&[(0.30, 0.22), (0.70, 0.22), (0.44, 0.80)], false),
        8 => {
            let mut segs = ring(0.50, 0.35, 0.15, 0.13);
            segs.extend(ring(0.50, 0.65, 0.18, 0.15));
            segs
        }
        _ => {
            let mut segs = ring(0.50, 0.34, 0.16, 0.14);
            segs.push(((0.66, 0.36), (0.60, 0.80)));
            segs
        }
    }
}

fn point_segment_dist(px: f64, py: f64, seg: &Seg) -> f64 {
    let ((x0, y0), (x1, y1)) = *seg;
    let dx = x1 - x0;
    let dy = y1 - y0;
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        ((px - x0) * dx + (py - y0) * dy) / len2
    } else {
        0.0
    }
    .clamp(0.0, 1.0);
    let cx = x0 + t * dx;
    let cy = y0 + t * dy;
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Generates `count` glyph images of side `size`, deterministic per
/// `(seed, index)`. Class cycles through the ten templates; endpoints are
/// jittered per sample so the corpus has real shape variability.
pub fn glyph_stack(count: usize, size: usize, seed: u64) -> Vec<Image> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(rng_domain::GLYPH, seed, i as u64);
            let class = i % 10;
            let jitter = 0.05;
            let scale = rng.gen_range(0.85..1.1);
            let (ox, oy) = (rng.gen_range(-0.04..0.04), rng.gen_range(-0.04..0.04));
            let segs: Vec<Seg> = template(class)
                .into_iter()
                .map(|((x0, y0), (x1, y1))| {
                    let mut jig = |v: f64, o: f64| {
                        0.5 + (v - 0.5) * scale + o + rng.gen_range(-jitter..jitter)
                    };
                    (
                        (jig(x0, ox), jig(y0, oy)),
                        (jig(x1, ox), jig(y1, oy)),
                    )
                })
                .collect();
            let sigma = rng.gen_range(0.040..0.055);
            let mut pixels = Array2::<f32>::zeros((size, size));
            for r in 0..size {
                for c in 0..size {
                    let x = (c as f64 + 0.5) / size as f64;
                    let y = (r as f64 + 0.5) / size as f64;
                    let mut v = 0.0f64;
                    for seg in &segs {
                        let d = point_segment_dist(x, y, seg);
                        v = v.max((-d * d / (2.0 * sigma * sigma)).exp());
                    }
                    pixels[[r, c]] = v as f32;
                }
            }
            normalize(&Image::new(pixels).expect("finite glyph")).expect("finite glyph")
        })
        .collect()
}
