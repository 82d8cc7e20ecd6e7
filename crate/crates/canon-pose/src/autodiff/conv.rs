//! Low-level convolution kernels: im2col + matrix multiply, with the forward
//! pass, input gradient, and parameter gradient sharing one implementation.
//! Transposed convolution reuses the same three kernels with the roles of
//! input and output swapped.
//!
//! Parallel work is split into chunks whose boundaries depend only on the
//! problem shape, never on the thread count, and partial sums are reduced in
//! chunk order; results are therefore bitwise reproducible for any `--threads`
//! setting.

use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::Element;

/// Rows per parallel chunk in the batched-gemm row split.
const GEMM_CHUNK: usize = 1024;
/// Samples per parallel chunk when accumulating weight gradients.
const ACCUM_CHUNK: usize = 16;

/// Output spatial size of a stride-`s`, padding-`p` convolution.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return Err(Error::Dimension(format!(
            "convolution does not fit: input {input}, kernel {kernel}, stride {stride}, pad {pad}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output spatial size of the matching transposed convolution.
pub fn conv_transpose_out_size(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Result<usize> {
    if out_pad >= stride {
        return Err(Error::Dimension(format!(
            "output padding {out_pad} must be smaller than stride {stride}"
        )));
    }
    let grown = (input - 1) * stride + kernel + out_pad;
    if grown < 2 * pad + 1 {
        return Err(Error::Dimension(format!(
            "transposed convolution does not fit: input {input}, kernel {kernel}, pad {pad}"
        )));
    }
    Ok(grown - 2 * pad)
}

/// `out = a . b` with the row dimension split into fixed chunks.
pub fn par_matmul<T: Element>(a: ArrayView2<T>, b: ArrayView2<T>) -> Array2<T> {
    let m = a.nrows();
    let n = b.ncols();
    let mut out = Array2::<T>::zeros((m, n));
    if m == 0 || n == 0 {
        return out;
    }
    out.axis_chunks_iter_mut(Axis(0), GEMM_CHUNK)
        .into_par_iter()
        .zip(a.axis_chunks_iter(Axis(0), GEMM_CHUNK).into_par_iter())
        .for_each(|(mut oc, ac)| {
            ndarray::linalg::general_mat_mul(T::one(), &ac, &b, T::zero(), &mut oc);
        });
    out
}

/// `out = a^T . b` accumulated over row chunks in fixed order.
fn matmul_at_b<T: Element>(a: ArrayView2<T>, b: ArrayView2<T>) -> Array2<T> {
    let rows = a.nrows();
    let chunk = (ACCUM_CHUNK * 256).max(1);
    let partials: Vec<Array2<T>> = a
        .axis_chunks_iter(Axis(0), chunk)
        .into_par_iter()
        .zip(b.axis_chunks_iter(Axis(0), chunk).into_par_iter())
        .map(|(ac, bc)| ac.t().dot(&bc))
        .collect();
    let mut out = Array2::<T>::zeros((a.ncols(), b.ncols()));
    if rows == 0 {
        return out;
    }
    for p in partials {
        out += &p;
    }
    out
}

struct ConvGeom {
    batch: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

fn geometry<T: Element>(
    x: &ArrayView4<T>,
    weight: &ArrayView4<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    let (batch, in_ch, h, w) = x.dim();
    let (out_ch, w_in_ch, kh, kw) = weight.dim();
    if w_in_ch != in_ch {
        return Err(Error::Dimension(format!(
            "convolution channel mismatch: input has {in_ch}, weight expects {w_in_ch}"
        )));
    }
    let oh = conv_out_size(h, kh, stride, pad)?;
    let ow = conv_out_size(w, kw, stride, pad)?;
    Ok(ConvGeom {
        batch,
        in_ch,
        h,
        w,
        out_ch,
        kh,
        kw,
        oh,
        ow,
        stride,
        pad,
    })
}

/// Unrolls one sample into `rows = oh*ow`, `cols = in_ch*kh*kw`; out-of-bounds
/// taps (the zero padding) stay zero.
fn im2col_sample<T: Element>(x: &ArrayView4<T>, b: usize, g: &ConvGeom, block: &mut [T]) {
    let ckk = g.in_ch * g.kh * g.kw;
    for v in block.iter_mut() {
        *v = T::zero();
    }
    let sample = x.index_axis(Axis(0), b);
    for c in 0..g.in_ch {
        let plane = sample.index_axis(Axis(0), c);
        for u in 0..g.kh {
            for v in 0..g.kw {
                let col = (c * g.kh + u) * g.kw + v;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + u) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let row_base = oy * g.ow;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + v) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        block[(row_base + ox) * ckk + col] = plane[[iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
}

fn im2col_batch<T: Element>(x: &ArrayView4<T>, g: &ConvGeom) -> Array2<T> {
    let ckk = g.in_ch * g.kh * g.kw;
    let rows_per_sample = g.oh * g.ow;
    let mut cols = Array2::<T>::zeros((g.batch * rows_per_sample, ckk));
    {
        let slice = cols.as_slice_mut().expect("freshly allocated, standard layout");
        slice
            .par_chunks_mut(rows_per_sample * ckk)
            .enumerate()
            .for_each(|(b, block)| im2col_sample(x, b, g, block));
    }
    cols
}

/// dy as a `[batch*oh*ow, out_ch]` matrix.
fn dy_matrix<T: Element>(dy: &ArrayView4<T>, g: &ConvGeom) -> Array2<T> {
    let rows_per_sample = g.oh * g.ow;
    let mut mat = Array2::<T>::zeros((g.batch * rows_per_sample, g.out_ch));
    {
        let slice = mat.as_slice_mut().expect("standard layout");
        slice
            .par_chunks_mut(rows_per_sample * g.out_ch)
            .enumerate()
            .for_each(|(b, block)| {
                let sample = dy.index_axis(Axis(0), b);
                for k in 0..g.out_ch {
                    let plane = sample.index_axis(Axis(0), k);
                    for oy in 0..g.oh {
                        for ox in 0..g.ow {
                            block[(oy * g.ow + ox) * g.out_ch + k] = plane[[oy, ox]];
                        }
                    }
                }
            });
    }
    mat
}

/// Forward convolution: `[b, c, h, w] -> [b, k, oh, ow]`.
pub fn conv_fwd<T: Element>(
    x: ArrayView4<T>,
    weight: ArrayView4<T>,
    bias: Option<&Array1<T>>,
    stride: usize,
    pad: usize,
) -> Result<Array4<T>> {
    let g = geometry(&x, &weight, stride, pad)?;
    if let Some(b) = bias {
        if b.len() != g.out_ch {
            return Err(Error::Dimension(format!(
                "bias length {} vs {} output channels",
                b.len(),
                g.out_ch
            )));
        }
    }
    let ckk = g.in_ch * g.kh * g.kw;
    let cols = im2col_batch(&x, &g);
    let w_flat = weight
        .to_shape((g.out_ch, ckk))
        .expect("weight reshape")
        .to_owned();
    // [rows, ckk] . [ckk, out_ch]
    let out_mat = par_matmul(cols.view(), w_flat.t());

    let rows_per_sample = g.oh * g.ow;
    let mut out = Array4::<T>::zeros((g.batch, g.out_ch, g.oh, g.ow));
    {
        let plane = g.oh * g.ow;
        let slice = out.as_slice_mut().expect("standard layout");
        slice
            .par_chunks_mut(g.out_ch * plane)
            .enumerate()
            .for_each(|(b, block)| {
                let base_row = b * rows_per_sample;
                for k in 0..g.out_ch {
                    let add = bias.map(|bv| bv[k]).unwrap_or_else(T::zero);
                    for r in 0..plane {
                        block[k * plane + r] = out_mat[[base_row + r, k]] + add;
                    }
                }
            });
    }
    Ok(out)
}

/// Gradient of a convolution with respect to its input; also the forward pass
/// of the matching transposed convolution.
pub fn conv_bwd_input<T: Element>(
    dy: ArrayView4<T>,
    weight: ArrayView4<T>,
    stride: usize,
    pad: usize,
    input_hw: (usize, usize),
) -> Result<Array4<T>> {
    let (batch, out_ch, oh, ow) = dy.dim();
    let (w_out_ch, in_ch, kh, kw) = weight.dim();
    if w_out_ch != out_ch {
        return Err(Error::Dimension(format!(
            "gradient channel mismatch: {out_ch} vs weight {w_out_ch}"
        )));
    }
    let g = ConvGeom {
        batch,
        in_ch,
        h: input_hw.0,
        w: input_hw.1,
        out_ch,
        kh,
        kw,
        oh,
        ow,
        stride,
        pad,
    };
    let ckk = in_ch * kh * kw;
    let dy_mat = dy_matrix(&dy, &g);
    let w_flat = weight.to_shape((out_ch, ckk)).expect("weight reshape").to_owned();
    // [rows, out_ch] . [out_ch, ckk]
    let dcols = par_matmul(dy_mat.view(), w_flat.view());

    let rows_per_sample = oh * ow;
    let mut dx = Array4::<T>::zeros((batch, in_ch, g.h, g.w));
    {
        let sample_len = in_ch * g.h * g.w;
        let slice = dx.as_slice_mut().expect("standard layout");
        slice
            .par_chunks_mut(sample_len)
            .enumerate()
            .for_each(|(b, block)| {
                // col2im scatter-add, one sample per chunk.
                for oy in 0..oh {
                    for ox in 0..ow {
                        let row = b * rows_per_sample + oy * ow + ox;
                        for c in 0..in_ch {
                            for u in 0..kh {
                                let iy = (oy * stride + u) as isize - pad as isize;
                                if iy < 0 || iy >= g.h as isize {
                                    continue;
                                }
                                for v in 0..kw {
                                    let ix = (ox * stride + v) as isize - pad as isize;
                                    if ix < 0 || ix >= g.w as isize {
                                        continue;
                                    }
                                    let col = (c * kh + u) * kw + v;
                                    let idx =
                                        (c * g.h + iy as usize) * g.w + ix as usize;
                                    block[idx] = block[idx] + dcols[[row, col]];
                                }
                            }
                        }
                    }
                }
            });
    }
    Ok(dx)
}

/// Gradients of a convolution with respect to weight and bias. The kernel
/// size is passed explicitly: with stride > 1 several kernel sizes can map
/// the same input size to the same output size.
pub fn conv_bwd_params<T: Element>(
    x: ArrayView4<T>,
    dy: ArrayView4<T>,
    kernel: (usize, usize),
    stride: usize,
    pad: usize,
) -> Result<(Array4<T>, Array1<T>)> {
    let (_, out_ch, oh, ow) = dy.dim();
    let (batch, in_ch, h, w) = x.dim();
    if dy.dim().0 != batch {
        return Err(Error::Dimension("batch mismatch in conv gradient".into()));
    }
    let (kh, kw) = kernel;
    if conv_out_size(h, kh, stride, pad)? != oh || conv_out_size(w, kw, stride, pad)? != ow {
        return Err(Error::Dimension(format!(
            "inconsistent conv gradient shapes: input {h}x{w}, kernel {kh}x{kw}, \
             stride {stride}, pad {pad} does not produce {oh}x{ow}"
        )));
    }
    let g = ConvGeom {
        batch,
        in_ch,
        h,
        w,
        out_ch,
        kh,
        kw,
        oh,
        ow,
        stride,
        pad,
    };
    let cols = im2col_batch(&x, &g);
    let dy_mat = dy_matrix(&dy, &g);
    // [out_ch, rows] . [rows, ckk]
    let dw_flat = matmul_at_b(dy_mat.view(), cols.view());
    let dw = dw_flat
        .into_shape_with_order((out_ch, in_ch, kh, kw))
        .expect("weight gradient reshape");
    let db = dy_mat.sum_axis(Axis(0));
    Ok((dw, db))
}

/// Reference convolution: direct nested loops, kept deliberately simple. Used
/// only by tests as an independent oracle for the fast path.
#[cfg(test)]
pub fn conv_fwd_naive<T: Element>(
    x: ArrayView4<T>,
    weight: ArrayView4<T>,
    bias: Option<&Array1<T>>,
    stride: usize,
    pad: usize,
) -> Array4<T> {
    let (batch, in_ch, h, w) = x.dim();
    let (out_ch, _, kh, kw) = weight.dim();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Array4::<T>::zeros((batch, out_ch, oh, ow));
    for b in 0..batch {
        for k in 0..out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map(|bv| bv[k]).unwrap_or_else(T::zero);
                    for c in 0..in_ch {
                        for u in 0..kh {
                            for v in 0..kw {
                                let iy = (oy * stride + u) as isize - pad as isize;
                                let ix = (ox * stride + v) as isize - pad as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    acc = acc
                                        + x[[b, c, iy as usize, ix as usize]]
                                            * weight[[k, c, u, v]];
                                }
                            }
                        }
                    }
                    out[[b, k, oy, ox]] = acc;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn fast_conv_matches_naive() {
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (3, 2)] {
            let x = rand4((3, 2, 9, 9), 1 + stride as u64);
            let w = rand4((4, 2, 4, 4), 2 + pad as u64);
            let b = Array1::from_vec(vec![0.3, -0.2, 0.05, 0.9]);
            let fast = conv_fwd(x.view(), w.view(), Some(&b), stride, pad).unwrap();
            let naive = conv_fwd_naive(x.view(), w.view(), Some(&b), stride, pad);
            let diff = (&fast - &naive).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-12, "stride {stride} pad {pad}: max diff {diff}");
        }
    }

    #[test]
    fn adjoint_identity_holds() {
        // <conv(x), y> == <x, conv_bwd_input(y)> for random x, y.
        let stride = 2;
        let pad = 1;
        let x = rand4((2, 3, 8, 8), 11);
        let w = rand4((5, 3, 4, 4), 12);
        let y = conv_fwd(x.view(), w.view(), None, stride, pad).unwrap();
        let dy = rand4(y.dim(), 13);
        let dx = conv_bwd_input(dy.view(), w.view(), stride, pad, (8, 8)).unwrap();
        let lhs: f64 = (&y * &dy).sum();
        let rhs: f64 = (&x * &dx).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn weight_gradient_matches_finite_difference() {
        let stride = 2;
        let pad = 1;
        let x = rand4((2, 2, 6, 6), 21);
        let mut w = rand4((3, 2, 4, 4), 22);
        let dy_shape = conv_fwd(x.view(), w.view(), None, stride, pad).unwrap().dim();
        let dy = rand4(dy_shape, 23);
        let (dw, db) = conv_bwd_params(x.view(), dy.view(), (4, 4), stride, pad).unwrap();
        assert_eq!(dw.dim(), w.dim());

        let loss = |w: &Array4<f64>| -> f64 {
            let y = conv_fwd(x.view(), w.view(), None, stride, pad).unwrap();
            (&y * &dy).sum()
        };
        let eps = 1e-6;
        for idx in [[0, 0, 0, 0], [1, 1, 2, 3], [2, 0, 3, 1]] {
            let orig = w[idx];
            w[idx] = orig + eps;
            let plus = loss(&w);
            w[idx] = orig - eps;
            let minus = loss(&w);
            w[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            assert!(
                (dw[idx] - numeric).abs() <= 1e-6 * numeric.abs().max(1.0),
                "dw{idx:?}: analytic {} vs numeric {numeric}",
                dw[idx]
            );
        }
        let db_expected = dy.sum_axis(Axis(0)).sum_axis(Axis(1)).sum_axis(Axis(1));
        let diff = (&db - &db_expected).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-10);
    }

    #[test]
    fn transpose_sizes_round_trip() {
        // Encoder chain sizes and the decoder chain that mirrors them.
        for input in [28usize, 40] {
            let mut sizes = vec![input];
            for _ in 0..4 {
                sizes.push(conv_out_size(*sizes.last().unwrap(), 4, 2, 1).unwrap());
            }
            for win in sizes.windows(2).rev() {
                let (bigger, smaller) = (win[0], win[1]);
                let base = conv_transpose_out_size(smaller, 4, 2, 1, 0).unwrap();
                let out_pad = bigger - base;
                assert!(out_pad < 2, "out_pad {out_pad}");
                assert_eq!(
                    conv_transpose_out_size(smaller, 4, 2, 1, out_pad).unwrap(),
                    bigger
                );
            }
        }
    }
}
