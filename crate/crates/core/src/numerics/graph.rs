//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every op evaluates eagerly and appends a node, so insertion order is a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! Parameter leaves borrow their values from a [`ParameterStore`], which keeps
//! a forward pass allocation-light and lets many graphs share one store.

use std::borrow::Cow;

use super::tensor::{matmul_acc, transpose};
use super::{Gradients, NumericsError, ParameterStore, Scalar, Tensor};

/// Variance floor inside the layer-norm denominator.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// 3×3 convolution window geometry over a channels-last `[B, H, W, C]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub const KERNEL: usize = 3;

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - Self::KERNEL) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - Self::KERNEL) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        Self::KERNEL * Self::KERNEL * self.channels
    }

    /// Calls `f(dst, src)` for every in-bounds tap, where `dst` indexes the
    /// unfolded matrix and `src` the input buffer.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let c = self.channels;
        let patch = self.patch_len();
        for b in 0..self.batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = (b * oh + oy) * ow + ox;
                    for ky in 0..Self::KERNEL {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        for kx in 0..Self::KERNEL {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            let src = ((b * self.height + iy as usize) * self.width + ix as usize) * c;
                            let col = (ky * Self::KERNEL + kx) * c;
                            for ch in 0..c {
                                f(row * patch + col + ch, src + ch);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Softmax(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId },
    Concat(Vec<NodeId>),
    SliceCols { x: NodeId, start: usize },
    SliceRows { x: NodeId, start: usize },
    PairSum(NodeId, NodeId),
    MeanAbs(NodeId),
    Sum(NodeId),
    CrossEntropy { logits: NodeId, targets: Vec<usize> },
    Im2Col { x: NodeId, geom: ConvGeometry },
    MeanAxis1 { x: NodeId, groups: usize },
    Reshape(NodeId),
}

struct Node<'p, T: Scalar> {
    op: Op,
    value: Cow<'p, Tensor<T>>,
    /// Op-specific forward cache (normalized activations, probabilities, ...).
    aux: Vec<T>,
    param: Option<usize>,
}

/// A recorded computation. Single-writer; share immutably once built.
pub struct Graph<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
}

impl<'p, T: Scalar> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn ensure_finite<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(), NumericsError> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(NumericsError::NonFinite { op })
    }
}

/// True when `b`'s shape is a trailing suffix of `a`'s (broadcast over leading dims).
fn suffix_broadcast(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor<T>, aux: Vec<T>, name: &'static str) -> Result<NodeId, NumericsError> {
        ensure_finite(name, &value)?;
        self.nodes.push(Node {
            op,
            value: Cow::Owned(value),
            aux,
            param: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Result<NodeId, NumericsError> {
        self.push(Op::Leaf, t, Vec::new(), "input")
    }

    /// Trainable leaf borrowed from `store`.
    pub fn param(&mut self, store: &'p ParameterStore<T>, name: &str) -> Result<NodeId, NumericsError> {
        let id = store
            .id(name)
            .ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))?;
        let value = store.by_index(id);
        ensure_finite("param", value)?;
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Cow::Borrowed(value),
            aux: Vec::new(),
            param: Some(id),
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// `a: [.., m, k] · b: [k, n]`, leading dims of `a` flattened into rows.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.cols() != bv.shape()[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![T::zero(); m * n];
        matmul_acc(av.data(), bv.data(), &mut out, m, k, n);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        self.push(Op::MatMul(a, b), Tensor::new(shape, out)?, Vec::new(), "matmul")
    }

    /// `a: [m, k] · bᵀ` with `b: [n, k]`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.cols() {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul_t",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let bt = transpose(bv.data(), n, k);
        let mut out = vec![T::zero(); m * n];
        matmul_acc(av.data(), &bt, &mut out, m, k, n);
        self.push(Op::MatMulT(a, b), Tensor::new(vec![m, n], out)?, Vec::new(), "matmul_t")
    }

    fn broadcast_binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if !suffix_broadcast(av.shape(), bv.shape()) {
            return Err(NumericsError::ShapeMismatch {
                op: name,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let bl = bv.len();
        let data = av
            .data()
            .chunks_exact(bl)
            .flat_map(|chunk| chunk.iter().zip(bv.data()).map(|(&x, &y)| f(x, y)))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    /// Elementwise sum; `b` broadcasts over the leading dims of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let out = self.broadcast_binary(a, b, "add", |x, y| x + y)?;
        self.push(Op::Add(a, b), out, Vec::new(), "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let out = self.broadcast_binary(a, b, "sub", |x, y| x - y)?;
        self.push(Op::Sub(a, b), out, Vec::new(), "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let out = self.broadcast_binary(a, b, "mul", |x, y| x * y)?;
        self.push(Op::Mul(a, b), out, Vec::new(), "mul")
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId, NumericsError> {
        let f = T::of(factor);
        let out = self.value(x).map(|v| v * f);
        self.push(Op::Scale(x, factor), out, Vec::new(), "scale")
    }

    /// Rectifier. The derivative at exactly zero is taken as zero.
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        let zero = T::zero();
        let out = self.value(x).map(|v| if v > zero { v } else { zero });
        self.push(Op::Relu(x), out, Vec::new(), "relu")
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_exact_mut(cols) {
            softmax_row(row);
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(Op::Softmax(x), out, Vec::new(), "softmax")
    }

    /// Layer normalization over the last dimension with learnable `gain` and
    /// `bias` (both of length `cols`). Constant rows normalize to zero.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId, NumericsError> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let cols = xv.cols();
        if cols < 2 {
            return Err(NumericsError::InvalidShape {
                op: "layer_norm",
                shape: xv.shape().to_vec(),
                reason: "last dimension must be at least 2",
            });
        }
        if gv.shape() != [cols] || bv.shape() != [cols] {
            return Err(NumericsError::ShapeMismatch {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let rows = xv.rows();
        // aux layout: normalized values (rows*cols) followed by 1/std per row.
        let mut aux = vec![T::zero(); rows * cols + rows];
        let mut out = vec![T::zero(); rows * cols];
        let n = T::of(cols as f64);
        let eps = T::of(LAYER_NORM_EPS);
        for r in 0..rows {
            let row = &xv.data()[r * cols..(r + 1) * cols];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            aux[rows * cols + r] = inv;
            for c in 0..cols {
                let xhat = (row[c] - mean) * inv;
                aux[r * cols + c] = xhat;
                out[r * cols + c] = xhat * gv.data()[c] + bv.data()[c];
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(Op::LayerNorm { x, gain, bias }, out, aux, "layer_norm")
    }

    /// Concatenation along the last dimension.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::InvalidShape {
            op: "concat",
            shape: vec![],
            reason: "no inputs",
        })?;
        let lead = self.value(first).shape()[..self.value(first).shape().len() - 1].to_vec();
        let rows = self.value(first).rows();
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            total += self.value(p).cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                let c = v.cols();
                out.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push(
            Op::Concat(parts.to_vec()),
            Tensor::new(shape, out)?,
            Vec::new(),
            "concat",
        )
    }

    /// Columns `start..start+len` of the last dimension.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, NumericsError> {
        let xv = self.value(x);
        let cols = xv.cols();
        if len == 0 || start + len > cols {
            return Err(NumericsError::InvalidShape {
                op: "slice_cols",
                shape: xv.shape().to_vec(),
                reason: "column range out of bounds",
            });
        }
        let data = xv
            .data()
            .chunks_exact(cols)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        self.push(
            Op::SliceCols { x, start },
            Tensor::new(shape, data)?,
            Vec::new(),
            "slice_cols",
        )
    }

    /// Rows `start..start+len` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, NumericsError> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || len == 0 || start + len > xv.shape()[0] {
            return Err(NumericsError::InvalidShape {
                op: "slice_rows",
                shape: xv.shape().to_vec(),
                reason: "row range out of bounds",
            });
        }
        let cols = xv.cols();
        let data = xv.data()[start * cols..(start + len) * cols].to_vec();
        self.push(
            Op::SliceRows { x, start },
            Tensor::new(vec![len, cols], data)?,
            Vec::new(),
            "slice_rows",
        )
    }

    /// All ordered row pairs: `out[i·n + j] = a[i] + b[j]` for `a, b: [n, d]`.
    pub fn pair_sum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || av.shape() != bv.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "pair_sum",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (n, d) = (av.rows(), av.cols());
        let mut out = Vec::with_capacity(n * n * d);
        for i in 0..n {
            let ar = &av.data()[i * d..(i + 1) * d];
            for j in 0..n {
                let br = &bv.data()[j * d..(j + 1) * d];
                out.extend(ar.iter().zip(br).map(|(&x, &y)| x + y));
            }
        }
        self.push(
            Op::PairSum(a, b),
            Tensor::new(vec![n * n, d], out)?,
            Vec::new(),
            "pair_sum",
        )
    }

    /// Mean of absolute values over every entry. `d|x|/dx` at zero is zero.
    pub fn mean_abs(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        let xv = self.value(x);
        let n = T::of(xv.len() as f64);
        let m = xv.data().iter().map(|v| v.abs()).sum::<T>() / n;
        self.push(Op::MeanAbs(x), Tensor::scalar(m), Vec::new(), "mean_abs")
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Op::Sum(x), Tensor::scalar(s), Vec::new(), "sum")
    }

    /// Mean softmax cross-entropy of `logits: [B, K]` against class indices.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId, NumericsError> {
        let lv = self.value(logits);
        let k = lv.cols();
        if lv.rows() != targets.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(NumericsError::TargetOutOfRange { target: t, classes: k });
        }
        let mut probs = lv.data().to_vec();
        let mut total = T::zero();
        for (row, &t) in probs.chunks_exact_mut(k).zip(targets) {
            softmax_row(row);
            total = total - row[t].max(T::min_positive_value()).ln();
        }
        let loss = total / T::of(targets.len() as f64);
        self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            Tensor::scalar(loss),
            probs,
            "cross_entropy",
        )
    }

    /// Unfolds 3×3 windows of a channels-last image batch into rows of a
    /// `[B·Ho·Wo, 9·C]` matrix, so a convolution becomes one matmul.
    pub fn im2col(&mut self, x: NodeId, geom: ConvGeometry) -> Result<NodeId, NumericsError> {
        let xv = self.value(x);
        let expected = geom.batch * geom.height * geom.width * geom.channels;
        if xv.len() != expected || geom.stride == 0 {
            return Err(NumericsError::ShapeMismatch {
                op: "im2col",
                lhs: xv.shape().to_vec(),
                rhs: vec![geom.batch, geom.height, geom.width, geom.channels],
            });
        }
        let rows = geom.batch * geom.out_height() * geom.out_width();
        let mut out = vec![T::zero(); rows * geom.patch_len()];
        let src = xv.data();
        geom.for_each_tap(|dst, s| out[dst] = src[s]);
        self.push(
            Op::Im2Col { x, geom },
            Tensor::new(vec![rows, geom.patch_len()], out)?,
            Vec::new(),
            "im2col",
        )
    }

    /// Mean over the middle axis of `x` viewed as `[groups, S, C]`.
    pub fn mean_axis1(&mut self, x: NodeId, groups: usize) -> Result<NodeId, NumericsError> {
        let xv = self.value(x);
        let c = xv.cols();
        if groups == 0 || !xv.rows().is_multiple_of(groups) {
            return Err(NumericsError::InvalidShape {
                op: "mean_axis1",
                shape: xv.shape().to_vec(),
                reason: "rows not divisible by group count",
            });
        }
        let s = xv.rows() / groups;
        let inv = T::one() / T::of(s as f64);
        let mut out = vec![T::zero(); groups * c];
        for g in 0..groups {
            let acc = &mut out[g * c..(g + 1) * c];
            for r in 0..s {
                let row = &xv.data()[(g * s + r) * c..(g * s + r + 1) * c];
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a = *a + v;
                }
            }
            for a in acc.iter_mut() {
                *a = *a * inv;
            }
        }
        self.push(
            Op::MeanAxis1 { x, groups },
            Tensor::new(vec![groups, c], out)?,
            Vec::new(),
            "mean_axis1",
        )
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, NumericsError> {
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push(Op::Reshape(x), out, Vec::new(), "reshape")
    }

    /// Reverse sweep from the scalar `loss`. Parameters not reached by the
    /// loss receive zero gradients.
    pub fn backward(&self, loss: NodeId, store: &ParameterStore<T>) -> Result<Gradients<T>, NumericsError> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(NumericsError::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let mut out = Gradients::zeros_like(store);
        let mut param_grads: Vec<Tensor<T>> = out.iter().cloned().collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(pid) = node.param {
                param_grads[pid].add_assign(&g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }
        out = Gradients::from_tensors(param_grads);
        Ok(out)
    }

    fn backprop_node(&self, node: &Node<'p, T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |id: NodeId, t: Tensor<T>| match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let bt = transpose(bv.data(), k, n);
                let mut da = vec![T::zero(); m * k];
                matmul_acc(g.data(), &bt, &mut da, m, n, k);
                let at = transpose(av.data(), m, k);
                let mut db = vec![T::zero(); k * n];
                matmul_acc(&at, g.data(), &mut db, k, m, n);
                acc(*a, Tensor::new(av.shape().to_vec(), da).unwrap());
                acc(*b, Tensor::new(bv.shape().to_vec(), db).unwrap());
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                let mut da = vec![T::zero(); m * k];
                matmul_acc(g.data(), bv.data(), &mut da, m, n, k);
                let gt = transpose(g.data(), m, n);
                let mut db = vec![T::zero(); n * k];
                matmul_acc(&gt, av.data(), &mut db, n, m, k);
                acc(*a, Tensor::new(av.shape().to_vec(), da).unwrap());
                acc(*b, Tensor::new(bv.shape().to_vec(), db).unwrap());
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let negate = matches!(node.op, Op::Sub(..));
                let bv = self.value(*b);
                let mut db = vec![T::zero(); bv.len()];
                for chunk in g.data().chunks_exact(bv.len()) {
                    for (d, &v) in db.iter_mut().zip(chunk) {
                        *d = *d + v;
                    }
                }
                if negate {
                    db.iter_mut().for_each(|v| *v = -*v);
                }
                acc(*a, g.clone());
                acc(*b, Tensor::new(bv.shape().to_vec(), db).unwrap());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let bl = bv.len();
                let mut da = Vec::with_capacity(av.len());
                let mut db = vec![T::zero(); bl];
                for (gc, ac) in g.data().chunks_exact(bl).zip(av.data().chunks_exact(bl)) {
                    for ((&gv, &x), (&y, d)) in gc.iter().zip(ac).zip(bv.data().iter().zip(db.iter_mut())) {
                        da.push(gv * y);
                        *d = *d + gv * x;
                    }
                }
                acc(*a, Tensor::new(av.shape().to_vec(), da).unwrap());
                acc(*b, Tensor::new(bv.shape().to_vec(), db).unwrap());
            }
            Op::Scale(x, factor) => {
                let f = T::of(*factor);
                acc(*x, g.map(|v| v * f));
            }
            Op::Relu(x) => {
                let zero = T::zero();
                let data = g
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gv, &xv)| if xv > zero { gv } else { zero })
                    .collect();
                acc(*x, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let cols = y.cols();
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks_exact(cols).zip(g.data().chunks_exact(cols)) {
                    let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                    dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                acc(*x, Tensor::new(y.shape().to_vec(), dx).unwrap());
            }
            Op::LayerNorm { x, gain, bias } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let (rows, cols) = (xv.rows(), xv.cols());
                let n = T::of(cols as f64);
                let mut dx = vec![T::zero(); rows * cols];
                let mut dgain = vec![T::zero(); cols];
                let mut dbias = vec![T::zero(); cols];
                for r in 0..rows {
                    let xhat = &node.aux[r * cols..(r + 1) * cols];
                    let inv = node.aux[rows * cols + r];
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let mut mean_d = T::zero();
                    let mut mean_dx = T::zero();
                    for c in 0..cols {
                        let d = gr[c] * gv.data()[c];
                        mean_d = mean_d + d;
                        mean_dx = mean_dx + d * xhat[c];
                        dgain[c] = dgain[c] + gr[c] * xhat[c];
                        dbias[c] = dbias[c] + gr[c];
                    }
                    mean_d = mean_d / n;
                    mean_dx = mean_dx / n;
                    for c in 0..cols {
                        let d = gr[c] * gv.data()[c];
                        dx[r * cols + c] = inv * (d - mean_d - xhat[c] * mean_dx);
                    }
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
                acc(*gain, Tensor::new(vec![cols], dgain).unwrap());
                acc(*bias, Tensor::new(vec![cols], dbias).unwrap());
            }
            Op::Concat(parts) => {
                let total = g.cols();
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let c = pv.cols();
                    let mut d = Vec::with_capacity(pv.len());
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                    }
                    acc(p, Tensor::new(pv.shape().to_vec(), d).unwrap());
                    offset += c;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let (cols, len) = (xv.cols(), g.cols());
                let mut d = vec![T::zero(); xv.len()];
                for (dr, gr) in d.chunks_exact_mut(cols).zip(g.data().chunks_exact(len)) {
                    dr[*start..*start + len].copy_from_slice(gr);
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), d).unwrap());
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut d = vec![T::zero(); xv.len()];
                d[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                acc(*x, Tensor::new(xv.shape().to_vec(), d).unwrap());
            }
            Op::PairSum(a, b) => {
                let av = self.value(*a);
                let (n, d) = (av.rows(), av.cols());
                let mut da = vec![T::zero(); n * d];
                let mut db = vec![T::zero(); n * d];
                for i in 0..n {
                    for j in 0..n {
                        let gr = &g.data()[(i * n + j) * d..(i * n + j + 1) * d];
                        for c in 0..d {
                            da[i * d + c] = da[i * d + c] + gr[c];
                            db[j * d + c] = db[j * d + c] + gr[c];
                        }
                    }
                }
                acc(*a, Tensor::new(vec![n, d], da).unwrap());
                acc(*b, Tensor::new(vec![n, d], db).unwrap());
            }
            Op::MeanAbs(x) => {
                let xv = self.value(*x);
                let scale = g.item() / T::of(xv.len() as f64);
                let zero = T::zero();
                acc(
                    *x,
                    xv.map(|v| {
                        if v > zero {
                            scale
                        } else if v < zero {
                            -scale
                        } else {
                            zero
                        }
                    }),
                );
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                acc(*x, Tensor::full(xv.shape(), g.item()));
            }
            Op::CrossEntropy { logits, targets } => {
                let lv = self.value(*logits);
                let k = lv.cols();
                let scale = g.item() / T::of(targets.len() as f64);
                let mut d = node.aux.clone();
                for (row, &t) in d.chunks_exact_mut(k).zip(targets) {
                    row[t] = row[t] - T::one();
                    row.iter_mut().for_each(|v| *v = *v * scale);
                }
                acc(*logits, Tensor::new(lv.shape().to_vec(), d).unwrap());
            }
            Op::Im2Col { x, geom } => {
                let xv = self.value(*x);
                let mut d = vec![T::zero(); xv.len()];
                let gd = g.data();
                geom.for_each_tap(|dst, s| d[s] = d[s] + gd[dst]);
                acc(*x, Tensor::new(xv.shape().to_vec(), d).unwrap());
            }
            Op::MeanAxis1 { x, groups } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let s = xv.rows() / groups;
                let inv = T::one() / T::of(s as f64);
                let mut d = Vec::with_capacity(xv.len());
                for gi in 0..*groups {
                    let gr = &g.data()[gi * c..(gi + 1) * c];
                    for _ in 0..s {
                        d.extend(gr.iter().map(|&v| v * inv));
                    }
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), d).unwrap());
            }
            Op::Reshape(x) => {
                let xv = self.value(*x);
                acc(*x, g.clone().reshaped(xv.shape().to_vec()).unwrap());
            }
        }
    }
}

fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}
