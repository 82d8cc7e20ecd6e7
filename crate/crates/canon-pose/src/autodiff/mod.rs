//! A small reverse-mode automatic differentiation tape.
//!
//! The op set is exactly what the encoder / decoder / critic and the training
//! losses need: (strided) convolution, transposed convolution, affine maps,
//! the leaky rectifier, the logistic squashing nonlinearity, mean and
//! per-sample-sum reductions, and the scalar arithmetic the loss formulas are
//! made of. Forward values are computed eagerly as nodes are appended;
//! [`Graph::backward`] then walks the tape in reverse.
//!
//! The tape is generic over [`Element`] so toy problems can be checked against
//! central finite differences at 64-bit precision while training runs at
//! 32-bit.

mod check;
mod conv;

pub use check::{finite_difference, max_relative_error};
pub use conv::{conv_out_size, conv_transpose_out_size, par_matmul};

use ndarray::{ArrayD, ArrayViewD, Axis, IxDyn};

use crate::error::{Error, Result};

/// Scalar types the tape can differentiate through.
pub trait Element:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<T: Element> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Offset(NodeId, T),
    Abs(NodeId),
    Exp(NodeId),
    SqrtGuarded(NodeId),
    WrapAngle(NodeId),
    LeakyRelu(NodeId, T),
    Sigmoid(NodeId),
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Conv2d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize },
    ConvT2d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize },
    Reshape(NodeId),
    SliceCols { x: NodeId, start: usize, end: usize },
    SumPerSample(NodeId),
    MeanAll(NodeId),
}

struct Node<T: Element> {
    value: ArrayD<T>,
    op: Op<T>,
}

/// One forward computation and, on demand, its reverse sweep.
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: ArrayD<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> ArrayViewD<'_, T> {
        self.nodes[id.0].value.view()
    }

    /// Forward value of a node that holds a single scalar.
    pub fn scalar(&self, id: NodeId) -> Result<T> {
        let v = &self.nodes[id.0].value;
        if v.len() != 1 {
            return Err(Error::Dimension(format!(
                "expected scalar node, got shape {:?}",
                v.shape()
            )));
        }
        Ok(*v.iter().next().expect("len checked"))
    }

    /// Inserts a leaf (input or parameter) node.
    pub fn input(&mut self, value: ArrayD<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    fn binary_same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.nodes[a.0].value.shape() != self.nodes[b.0].value.shape() {
            return Err(Error::Dimension(format!(
                "{what}: shape {:?} vs {:?}",
                self.nodes[a.0].value.shape(),
                self.nodes[b.0].value.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "add")?;
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "sub")?;
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "mul")?;
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let value = self.nodes[a.0].value.mapv(|v| v * c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: NodeId, c: T) -> NodeId {
        let value = self.nodes[a.0].value.mapv(|v| v + c);
        self.push(value, Op::Offset(a, c))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.mapv(|v| v.abs());
        self.push(value, Op::Abs(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.mapv(|v| v.exp());
        self.push(value, Op::Exp(a))
    }

    /// Square root with a zero subgradient at zero, so per-sample L2 norms of
    /// an exact match do not blow up the reverse sweep.
    pub fn sqrt_guarded(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.mapv(|v| v.max(T::zero()).sqrt());
        self.push(value, Op::SqrtGuarded(a))
    }

    /// Wraps angles into `[-pi, pi)`; gradient passes through unchanged
    /// (the wrap is a piecewise shift).
    pub fn wrap_angle(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.mapv(|v| {
            T::from_f64(crate::imaging::wrap_to_pi(v.as_f64()))
        });
        self.push(value, Op::WrapAngle(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: T) -> NodeId {
        let value = self.nodes[a.0].value.mapv(|v| if v > T::zero() { v } else { v * slope });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let one = T::one();
        let value = self.nodes[a.0].value.mapv(|v| one / (one + (-v).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    /// `y = x . w^T + b` with `x: [batch, n]`, `w: [m, n]`, `b: [m]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xv = as2(&self.nodes[x.0].value, "affine input")?;
        let wv = as2(&self.nodes[w.0].value, "affine weight")?;
        let bv = as1(&self.nodes[b.0].value, "affine bias")?;
        if xv.ncols() != wv.ncols() || bv.len() != wv.nrows() {
            return Err(Error::Dimension(format!(
                "affine shapes: x {:?}, w {:?}, b {:?}",
                xv.dim(),
                wv.dim(),
                bv.len()
            )));
        }
        let mut out = conv::par_matmul(xv.view(), wv.t());
        out += &bv.view().insert_axis(Axis(0));
        Ok(self.push(out.into_dyn(), Op::Affine { x, w, b }))
    }

    /// Strided 2-D convolution with zero padding.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let xv = as4(&self.nodes[x.0].value, "conv input")?;
        let wv = as4(&self.nodes[w.0].value, "conv weight")?;
        let bv = as1(&self.nodes[b.0].value, "conv bias")?.to_owned();
        let out = conv::conv_fwd(xv.view(), wv.view(), Some(&bv), stride, pad)?;
        Ok(self.push(out.into_dyn(), Op::Conv2d { x, w, b, stride, pad }))
    }

    /// Strided 2-D transposed convolution; `out_pad` grows the output by up to
    /// `stride - 1` rows/cols so odd encoder sizes can be mirrored exactly.
    /// Weight layout is `[in_ch, out_ch, kh, kw]`.
    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<NodeId> {
        let xv = as4(&self.nodes[x.0].value, "transposed conv input")?;
        let wv = as4(&self.nodes[w.0].value, "transposed conv weight")?;
        let bv = as1(&self.nodes[b.0].value, "transposed conv bias")?;
        let (_, _, h, w_in) = xv.dim();
        let (w_in_ch, out_ch, kh, kw) = wv.dim();
        if w_in_ch != xv.dim().1 {
            return Err(Error::Dimension(format!(
                "transposed conv channel mismatch: input {} vs weight {}",
                xv.dim().1,
                w_in_ch
            )));
        }
        if bv.len() != out_ch {
            return Err(Error::Dimension("transposed conv bias length".into()));
        }
        let oh = conv::conv_transpose_out_size(h, kh, stride, pad, out_pad)?;
        let ow = conv::conv_transpose_out_size(w_in, kw, stride, pad, out_pad)?;
        let mut out = conv::conv_bwd_input(xv.view(), wv.view(), stride, pad, (oh, ow))?;
        for (k, mut plane) in out.axis_iter_mut(Axis(1)).enumerate() {
            plane += bv[k];
        }
        Ok(self.push(out.into_dyn(), Op::ConvT2d { x, w, b, stride, pad }))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.nodes[a.0].value.clone();
        let reshaped = value
            .into_shape_with_order(IxDyn(shape))
            .map_err(|e| Error::Dimension(format!("reshape: {e}")))?;
        Ok(self.push(reshaped, Op::Reshape(a)))
    }

    /// Columns `start..end` of a `[batch, width]` matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = as2(&self.nodes[a.0].value, "slice input")?;
        if start >= end || end > v.ncols() {
            return Err(Error::Dimension(format!(
                "column slice {start}..{end} of width {}",
                v.ncols()
            )));
        }
        let value = v.slice(ndarray::s![.., start..end]).to_owned().into_dyn();
        Ok(self.push(value, Op::SliceCols { x: a, start, end }))
    }

    /// Sums every trailing axis, producing one value per leading-axis entry.
    pub fn sum_per_sample(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if v.ndim() < 1 {
            return Err(Error::Dimension("sum_per_sample needs a batch axis".into()));
        }
        let batch = v.shape()[0];
        let flat = v
            .view()
            .into_shape_with_order((batch, v.len() / batch.max(1)))
            .map_err(|e| Error::Dimension(format!("sum_per_sample: {e}")))?;
        let value = flat.sum_axis(Axis(1)).into_dyn();
        Ok(self.push(value, Op::SumPerSample(a)))
    }

    /// Mean of all entries, as a scalar node (shape `[]`).
    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if v.is_empty() {
            return Err(Error::Argument("mean of an empty tensor".into()));
        }
        let n = T::from_f64(v.len() as f64);
        let mean = v.iter().fold(T::zero(), |acc, &x| acc + x) / n;
        let value = ArrayD::from_elem(IxDyn(&[]), mean);
        Ok(self.push(value, Op::MeanAll(a)))
    }

    /// Reverse sweep from a scalar root. Returns one gradient slot per node;
    /// nodes the root does not depend on stay `None`.
    pub fn backward(&mut self, root: NodeId) -> Result<Gradients<T>> {
        let root_val = &self.nodes[root.0].value;
        if root_val.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward root must be scalar, got shape {:?}",
                root_val.shape()
            )));
        }
        let mut grads: Vec<Option<ArrayD<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(ArrayD::from_elem(root_val.raw_dim(), T::one()));

        for i in (0..=root.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.accumulate_parents(i, &gout, &mut grads)?;
            grads[i] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn accumulate_parents(
        &self,
        i: usize,
        gout: &ArrayD<T>,
        grads: &mut [Option<ArrayD<T>>],
    ) -> Result<()> {
        let add_to = |grads: &mut [Option<ArrayD<T>>], id: NodeId, contrib: ArrayD<T>| {
            match &mut grads[id.0] {
                Some(acc) => *acc += &contrib,
                slot @ None => *slot = Some(contrib),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(grads, *a, gout.clone());
                add_to(grads, *b, gout.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, gout.clone());
                add_to(grads, *b, gout.mapv(|v| -v));
            }
            Op::Mul(a, b) => {
                let ga = gout * &self.nodes[b.0].value;
                let gb = gout * &self.nodes[a.0].value;
                add_to(grads, *a, ga);
                add_to(grads, *b, gb);
            }
            Op::Scale(a, c) => add_to(grads, *a, gout.mapv(|v| v * *c)),
            Op::Offset(a, _) => add_to(grads, *a, gout.clone()),
            Op::Abs(a) => {
                let x = &self.nodes[a.0].value;
                let mut g = gout.clone();
                g.zip_mut_with(x, |gv, &xv| {
                    *gv = if xv > T::zero() {
                        *gv
                    } else if xv < T::zero() {
                        -*gv
                    } else {
                        T::zero()
                    }
                });
                add_to(grads, *a, g);
            }
            Op::Exp(a) => {
                let g = gout * &self.nodes[i].value;
                add_to(grads, *a, g);
            }
            Op::SqrtGuarded(a) => {
                let half = T::from_f64(0.5);
                let mut g = gout.clone();
                g.zip_mut_with(&self.nodes[i].value, |gv, &sv| {
                    *gv = if sv > T::zero() { *gv * half / sv } else { T::zero() }
                });
                add_to(grads, *a, g);
            }
            Op::WrapAngle(a) => add_to(grads, *a, gout.clone()),
            Op::LeakyRelu(a, slope) => {
                let mut g = gout.clone();
                g.zip_mut_with(&self.nodes[a.0].value, |gv, &xv| {
                    if xv <= T::zero() {
                        *gv = *gv * *slope;
                    }
                });
                add_to(grads, *a, g);
            }
            Op::Sigmoid(a) => {
                let one = T::one();
                let mut g = gout.clone();
                g.zip_mut_with(&self.nodes[i].value, |gv, &sv| *gv = *gv * sv * (one - sv));
                add_to(grads, *a, g);
            }
            Op::Affine { x, w, b } => {
                let gy = as2(gout, "affine gradient")?;
                let xv = as2(&self.nodes[x.0].value, "affine input")?;
                let wv = as2(&self.nodes[w.0].value, "affine weight")?;
                let gx = conv::par_matmul(gy.view(), wv.view()).into_dyn();
                let gw = gy.t().dot(&xv).into_dyn();
                let gb = gy.sum_axis(Axis(0)).into_dyn();
                add_to(grads, *x, gx);
                add_to(grads, *w, gw);
                add_to(grads, *b, gb);
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let gy = as4(gout, "conv gradient")?;
                let xv = as4(&self.nodes[x.0].value, "conv input")?;
                let wv = as4(&self.nodes[w.0].value, "conv weight")?;
                let (_, _, h, w_in) = xv.dim();
                let gx = conv::conv_bwd_input(gy.view(), wv.view(), *stride, *pad, (h, w_in))?;
                let (_, _, kh, kw) = wv.dim();
                let (gw, gb) = conv::conv_bwd_params(xv.view(), gy.view(), (kh, kw), *stride, *pad)?;
                add_to(grads, *x, gx.into_dyn());
                add_to(grads, *w, gw.into_dyn());
                add_to(grads, *b, gb.into_dyn());
            }
            Op::ConvT2d { x, w, b, stride, pad } => {
                let gy = as4(gout, "transposed conv gradient")?;
                let xv = as4(&self.nodes[x.0].value, "transposed conv input")?;
                let wv = as4(&self.nodes[w.0].value, "transposed conv weight")?;
                let gx = conv::conv_fwd(gy.view(), wv.view(), None, *stride, *pad)?;
                let (_, _, kh, kw) = wv.dim();
                let (gw, _) = conv::conv_bwd_params(gy.view(), xv.view(), (kh, kw), *stride, *pad)?;
                let gb = gy
                    .sum_axis(Axis(3))
                    .sum_axis(Axis(2))
                    .sum_axis(Axis(0))
                    .into_dyn();
                add_to(grads, *x, gx.into_dyn());
                add_to(grads, *w, gw.into_dyn());
                add_to(grads, *b, gb);
            }
            Op::Reshape(a) => {
                let shape = self.nodes[a.0].value.raw_dim();
                let g = gout
                    .clone()
                    .into_shape_with_order(shape)
                    .map_err(|e| Error::Dimension(format!("reshape gradient: {e}")))?;
                add_to(grads, *a, g);
            }
            Op::SliceCols { x, start, end } => {
                let src = as2(&self.nodes[x.0].value, "slice input")?;
                let mut g = ndarray::Array2::<T>::zeros(src.dim());
                g.slice_mut(ndarray::s![.., *start..*end])
                    .assign(&as2(gout, "slice gradient")?);
                add_to(grads, *x, g.into_dyn());
            }
            Op::SumPerSample(a) => {
                let src_shape = self.nodes[a.0].value.raw_dim();
                let batch = src_shape[0];
                let per = self.nodes[a.0].value.len() / batch.max(1);
                let mut g = ArrayD::<T>::zeros(src_shape);
                {
                    let gs = g.as_slice_mut().expect("standard layout");
                    let go = gout.as_slice().expect("standard layout");
                    for b in 0..batch {
                        for k in 0..per {
                            gs[b * per + k] = go[b];
                        }
                    }
                }
                add_to(grads, *a, g);
            }
            Op::MeanAll(a) => {
                let src_shape = self.nodes[a.0].value.raw_dim();
                let n = T::from_f64(self.nodes[a.0].value.len() as f64);
                let gv = *gout.iter().next().expect("scalar") / n;
                add_to(grads, *a, ArrayD::from_elem(src_shape, gv));
            }
        }
        Ok(())
    }
}

/// Gradients produced by one reverse sweep.
pub struct Gradients<T: Element> {
    grads: Vec<Option<ArrayD<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the root with respect to the given node, if the root
    /// depends on it.
    pub fn get(&self, id: NodeId) -> Option<&ArrayD<T>> {
        self.grads[id.0].as_ref()
    }
}

fn as2<'a, T: Element>(
    v: &'a ArrayD<T>,
    what: &str,
) -> Result<ndarray::ArrayView2<'a, T>> {
    v.view()
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|_| Error::Dimension(format!("{what}: expected 2-d, got {:?}", v.shape())))
}

fn as1<'a, T: Element>(
    v: &'a ArrayD<T>,
    what: &str,
) -> Result<ndarray::ArrayView1<'a, T>> {
    v.view()
        .into_dimensionality::<ndarray::Ix1>()
        .map_err(|_| Error::Dimension(format!("{what}: expected 1-d, got {:?}", v.shape())))
}

fn as4<'a, T: Element>(
    v: &'a ArrayD<T>,
    what: &str,
) -> Result<ndarray::ArrayView4<'a, T>> {
    v.view()
        .into_dimensionality::<ndarray::Ix4>()
        .map_err(|_| Error::Dimension(format!("{what}: expected 4-d, got {:?}", v.shape())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, ArrayD};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randd(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-1.0..1.0))
    }

    /// Checks d(mean of graph output)/d(input) against central differences.
    fn check_unary<F>(build: F, x0: ArrayD<f64>, tol: f64)
    where
        F: Fn(&mut Graph<f64>, NodeId) -> NodeId,
    {
        let forward = |x: &ArrayD<f64>| -> f64 {
            let mut g = Graph::<f64>::new();
            let xid = g.input(x.clone());
            let out = build(&mut g, xid);
            let m = g.mean_all(out).unwrap();
            g.scalar(m).unwrap()
        };
        let mut g = Graph::<f64>::new();
        let xid = g.input(x0.clone());
        let out = build(&mut g, xid);
        let m = g.mean_all(out).unwrap();
        let grads = g.backward(m).unwrap();
        let analytic = grads.get(xid).unwrap();
        let numeric = finite_difference(forward, &x0, 1e-5);
        let err = max_relative_error(analytic, &numeric);
        assert!(err <= tol, "relative error {err}");
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        // Inputs kept away from the |.| kink.
        let x = randd(&[3, 4], 1).mapv(|v| v + 2.5 * v.signum());
        check_unary(|g, x| g.abs(x), x, 1e-6);
        check_unary(|g, x| g.exp(x), randd(&[2, 3], 2), 1e-6);
        check_unary(|g, x| g.leaky_relu(x, 0.2), randd(&[4, 4], 3), 1e-6);
        check_unary(|g, x| g.sigmoid(x), randd(&[4, 4], 4), 1e-6);
        check_unary(
            |g, x| {
                let s = g.mul(x, x).unwrap();
                let p = g.sum_per_sample(s).unwrap();
                g.sqrt_guarded(p)
            },
            randd(&[3, 5], 5),
            1e-5,
        );
        check_unary(
            |g, x| {
                let y = g.scale(x, 1.7);
                g.offset(y, -0.3)
            },
            randd(&[2, 2], 6),
            1e-6,
        );
    }

    #[test]
    fn mul_with_shared_operand_doubles_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input(arr1(&[3.0, -2.0]).into_dyn());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_per_sample(sq).unwrap();
        let m = g.mean_all(s).unwrap();
        let grads = g.backward(m).unwrap();
        let gx = grads.get(x).unwrap();
        // d/dx mean over batch of x^2 where each sample is a scalar: 2x/2.
        assert!((gx[[0]] - 3.0).abs() < 1e-12);
        assert!((gx[[1]] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn affine_gradients_match_finite_differences() {
        let x0 = randd(&[3, 4], 7);
        let w0 = randd(&[2, 4], 8);
        let b0 = randd(&[2], 9);
        let forward = |w: &ArrayD<f64>| -> f64 {
            let mut g = Graph::<f64>::new();
            let x = g.input(x0.clone());
            let w = g.input(w.clone());
            let b = g.input(b0.clone());
            let y = g.affine(x, w, b).unwrap();
            let s = g.sigmoid(y);
            let m = g.mean_all(s).unwrap();
            g.scalar(m).unwrap()
        };
        let mut g = Graph::<f64>::new();
        let x = g.input(x0.clone());
        let w = g.input(w0.clone());
        let b = g.input(b0.clone());
        let y = g.affine(x, w, b).unwrap();
        let s = g.sigmoid(y);
        let m = g.mean_all(s).unwrap();
        let grads = g.backward(m).unwrap();
        let numeric = finite_difference(forward, &w0, 1e-5);
        assert!(max_relative_error(grads.get(w).unwrap(), &numeric) <= 1e-6);
    }

    #[test]
    fn conv_and_transpose_gradients_match_finite_differences() {
        let x0 = randd(&[2, 2, 6, 6], 10);
        let w0 = randd(&[3, 2, 4, 4], 11);
        let b0 = randd(&[3], 12);
        let wt0 = randd(&[3, 2, 4, 4], 13); // [in,out,kh,kw] for the transpose
        let bt0 = randd(&[2], 14);

        let run = |x0: &ArrayD<f64>, w0: &ArrayD<f64>, wt0: &ArrayD<f64>| -> (Graph<f64>, [NodeId; 4], NodeId) {
            let mut g = Graph::<f64>::new();
            let x = g.input(x0.clone());
            let w = g.input(w0.clone());
            let b = g.input(b0.clone());
            let wt = g.input(wt0.clone());
            let bt = g.input(bt0.clone());
            let y = g.conv2d(x, w, b, 2, 1).unwrap();
            let a = g.leaky_relu(y, 0.2);
            let z = g.conv_transpose2d(a, wt, bt, 2, 1, 1).unwrap();
            let s = g.sigmoid(z);
            let m = g.mean_all(s).unwrap();
            (g, [x, w, wt, bt], m)
        };

        let (mut g, ids, m) = run(&x0, &w0, &wt0);
        assert_eq!(g.value(ids[0]).shape(), &[2, 2, 6, 6]);
        let grads = g.backward(m).unwrap();

        let num_x = finite_difference(
            |x: &ArrayD<f64>| {
                let (g, _, m) = run(x, &w0, &wt0);
                g.scalar(m).unwrap()
            },
            &x0,
            1e-5,
        );
        let num_w = finite_difference(
            |w: &ArrayD<f64>| {
                let (g, _, m) = run(&x0, w, &wt0);
                g.scalar(m).unwrap()
            },
            &w0,
            1e-5,
        );
        let num_wt = finite_difference(
            |wt: &ArrayD<f64>| {
                let (g, _, m) = run(&x0, &w0, wt);
                g.scalar(m).unwrap()
            },
            &wt0,
            1e-5,
        );
        assert!(max_relative_error(grads.get(ids[0]).unwrap(), &num_x) <= 1e-4);
        assert!(max_relative_error(grads.get(ids[1]).unwrap(), &num_w) <= 1e-4);
        assert!(max_relative_error(grads.get(ids[2]).unwrap(), &num_wt) <= 1e-4);
    }

    #[test]
    fn slice_cols_routes_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input(arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).into_dyn());
        let right = g.slice_cols(x, 1, 3).unwrap();
        let s = g.sum_per_sample(right).unwrap();
        let m = g.mean_all(s).unwrap();
        let grads = g.backward(m).unwrap();
        let gx = grads.get(x).unwrap();
        assert_eq!(gx[[0, 0]], 0.0);
        assert_eq!(gx[[0, 1]], 0.5);
        assert_eq!(gx[[1, 2]], 0.5);
    }

    #[test]
    fn slice_cols_rejects_bad_width() {
        let mut g = Graph::<f64>::new();
        let x = g.input(randd(&[2, 4], 20));
        assert!(g.slice_cols(x, 2, 6).is_err());
        assert!(g.slice_cols(x, 3, 3).is_err());
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::<f64>::new();
        let x = g.input(randd(&[2, 2], 21));
        let y = g.exp(x);
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn forward_is_pure() {
        let x0 = randd(&[2, 3, 8, 8], 22);
        let w0 = randd(&[4, 3, 4, 4], 23);
        let b0 = randd(&[4], 24);
        let once = |_| {
            let mut g = Graph::<f64>::new();
            let x = g.input(x0.clone());
            let w = g.input(w0.clone());
            let b = g.input(b0.clone());
            let y = g.conv2d(x, w, b, 2, 1).unwrap();
            g.value(y).to_owned()
        };
        assert_eq!(once(0), once(1));
    }
}
