//! Reverse-mode differentiation over a recorded operation list.
//!
//! A [`Graph`] owns every value produced during a forward pass. Each call
//! such as [`Graph::matmul`] evaluates eagerly, appends a node and returns a
//! [`Var`] handle. Nodes are appended in evaluation order, so the node list
//! is already topologically sorted and [`Graph::backward`] is a single
//! reverse sweep.
//!
//! Only leaves created with [`Graph::param`] keep gradients after the sweep;
//! interior gradients are transient. Calling `backward` again without
//! [`Graph::zero_grad`] adds to the stored leaf gradients.
//!
//! A graph is single-writer. Independent graphs share nothing and can be
//! driven from different threads.

pub(crate) mod kernels;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use kernels::{col2im_add, gemm, im2col, sigmoid, ConvGeom, MatView};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    AddTiled(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Conv2d { input: Var, kernel: Var, bias: Var, geom: ConvGeom, batch: usize },
    MaxPool2d { input: Var, argmax: Vec<usize> },
    Reshape(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNorm { input: Var, gain: Var, shift: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SliceCols { input: Var, start: usize },
    ConcatCols(Vec<Var>),
    MeanPool { input: Var, seq: usize },
    Sum(Var),
    Mean(Var),
    Dropout { input: Var, mask: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, seq: usize, probs: Vec<f64> },
    Loss { pred: Var, dpred: Vec<f64> },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
}

type Grads = Vec<Option<Vec<f64>>>;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf whose gradient is kept after [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward sweep(s) for a `param` leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        self.value(v).dims2().map_err(|_| {
            Error::shape(format!("{what}: expected a matrix, got shape {:?}", self.shape(v)))
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::shape(format!("matmul: {m}×{k} · {k2}×{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            MatView::new(self.value(a).data(), m, k),
            MatView::new(self.value(b).data(), k, n),
            &mut out,
            0.0,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push_op(value, Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("zip_with: same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_with(a, b, |p, q| p + q);
        Ok(self.push_op(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_with(a, b, |p, q| p - q);
        Ok(self.push_op(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_with(a, b, |p, q| p * q);
        Ok(self.push_op(v, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a length-`n` vector to every row of an `m × n` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "add_row_bias")?;
        if self.value(bias).len() != n {
            return Err(Error::shape(format!(
                "add_row_bias: bias of length {} for {m}×{n}",
                self.value(bias).len()
            )));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(n) {
            row.iter_mut().zip(b).for_each(|(v, &bv)| *v += bv);
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push_op(value, Op::AddRowBias(x, bias), &[x, bias]))
    }

    /// Adds an `n × d` table to each consecutive `n`-row block of a
    /// `(B·n) × d` matrix.
    pub fn add_tiled(&mut self, x: Var, table: Var) -> Result<Var> {
        let (rows, d) = self.dims2(x, "add_tiled")?;
        let (n, d2) = self.dims2(table, "add_tiled table")?;
        if d != d2 || rows % n != 0 {
            return Err(Error::shape(format!("add_tiled: {rows}×{d} with table {n}×{d2}")));
        }
        let t = self.value(table).data();
        let mut data = self.value(x).data().to_vec();
        for block in data.chunks_exact_mut(n * d) {
            block.iter_mut().zip(t).for_each(|(v, &p)| *v += p);
        }
        let value = Tensor::new(vec![rows, d], data)?;
        Ok(self.push_op(value, Op::AddTiled(x, table), &[x, table]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x).map(|e| e * factor);
        self.push_op(v, Op::Scale(x, factor), &[x])
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        let v = self.value(x).map(|e| kind.apply(e));
        self.push_op(v, Op::Act(x, kind), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(Activation::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(Activation::Tanh, x)
    }

    /// Valid (unpadded) cross-correlation. `input` is `C×H×W` or
    /// `N×C×H×W`; `kernels` is `C_out×C×k×k`; `bias` has `C_out` entries.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be positive"));
        }
        let ishape = self.shape(input).to_vec();
        let (batch, c_in, h, w, batched) = match ishape[..] {
            [c, h, w] => (1, c, h, w, false),
            [n, c, h, w] => (n, c, h, w, true),
            _ => return Err(Error::shape(format!("conv2d: input shape {ishape:?}"))),
        };
        let kshape = self.shape(kernels).to_vec();
        let [c_out, kc, kh, kw] = kshape[..] else {
            return Err(Error::shape(format!("conv2d: kernel shape {kshape:?}")));
        };
        if kc != c_in {
            return Err(Error::shape(format!(
                "conv2d: kernels expect {kc} input channels, input has {c_in}"
            )));
        }
        if kh != kw {
            return Err(Error::shape(format!("conv2d: non-square kernel {kh}×{kw}")));
        }
        if h < kh || w < kw {
            return Err(Error::shape(format!("conv2d: {h}×{w} input smaller than {kh}×{kw} kernel")));
        }
        if self.value(bias).len() != c_out {
            return Err(Error::shape(format!(
                "conv2d: bias of length {} for {c_out} kernels",
                self.value(bias).len()
            )));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            k: kh,
            stride,
            out_h: (h - kh) / stride + 1,
            out_w: (w - kw) / stride + 1,
        };
        let (pl, p) = (geom.patch_len(), geom.positions());
        let x = self.value(input).data();
        let kern = self.value(kernels).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; batch * c_out * p];
        let mut cols = vec![0.0; pl * p];
        for (n, out_n) in out.chunks_exact_mut(c_out * p).enumerate() {
            im2col(&x[n * c_in * h * w..(n + 1) * c_in * h * w], &geom, &mut cols);
            for (co, plane) in out_n.chunks_exact_mut(p).enumerate() {
                plane.fill(b[co]);
            }
            gemm(MatView::new(kern, c_out, pl), MatView::new(&cols, pl, p), out_n, 1.0);
        }
        let oshape = if batched {
            vec![batch, c_out, geom.out_h, geom.out_w]
        } else {
            vec![c_out, geom.out_h, geom.out_w]
        };
        let value = Tensor::new(oshape, out)?;
        let op = Op::Conv2d { input, kernel: kernels, bias, geom, batch };
        Ok(self.push_op(value, op, &[input, kernels, bias]))
    }

    /// Non-overlapping max pooling; trailing rows/columns that do not fill
    /// a window are dropped. Ties resolve to the first element in row-major
    /// order.
    pub fn maxpool2d(&mut self, input: Var, window: usize) -> Result<Var> {
        if window == 0 {
            return Err(Error::invalid("maxpool2d: window must be positive"));
        }
        let ishape = self.shape(input).to_vec();
        let (planes, h, w) = match ishape[..] {
            [c, h, w] => (c, h, w),
            [n, c, h, w] => (n * c, h, w),
            _ => return Err(Error::shape(format!("maxpool2d: input shape {ishape:?}"))),
        };
        let (oh, ow) = (h / window, w / window);
        if oh == 0 || ow == 0 {
            return Err(Error::shape(format!("maxpool2d: window {window} exceeds {h}×{w} input")));
        }
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for pl in 0..planes {
            let base = pl * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * window * w + ox * window;
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = base + (oy * window + dy) * w + ox * window + dx;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let mut oshape = ishape.clone();
        let r = oshape.len();
        oshape[r - 2] = oh;
        oshape[r - 1] = ow;
        let value = Tensor::new(oshape, out)?;
        Ok(self.push_op(value, Op::MaxPool2d { input, argmax }, &[input]))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push_op(value, Op::Reshape(x), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "transpose")?;
        let src = self.value(x).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], data)?;
        Ok(self.push_op(value, Op::Transpose(x), &[x]))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "softmax_rows")?;
        let mut data = self.value(x).data().to_vec();
        data.chunks_exact_mut(n).for_each(softmax_in_place);
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push_op(value, Op::SoftmaxRows(x), &[x]))
    }

    /// Per-row layer normalization with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, epsilon: f64) -> Result<Var> {
        let (m, d) = match self.shape(x)[..] {
            [d] => (1, d),
            [m, d] => (m, d),
            _ => return Err(Error::shape(format!("layer_norm: shape {:?}", self.shape(x)))),
        };
        if self.value(gain).len() != d || self.value(shift).len() != d {
            return Err(Error::shape(format!("layer_norm: gain/shift must have length {d}")));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let s = self.value(shift).data();
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + epsilon).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                let xh = (row[j] - mean) * inv;
                xhat[i * d + j] = xh;
                out[i * d + j] = g[j] * xh + s[j];
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let op = Op::LayerNorm { input: x, gain, shift, xhat, inv_std };
        Ok(self.push_op(value, op, &[x, gain, shift]))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(Error::shape(format!("slice_cols: {start}..{} of {n} columns", start + len)));
        }
        let src = self.value(x).data();
        let data = (0..m).flat_map(|i| src[i * n + start..i * n + start + len].iter().copied()).collect();
        let value = Tensor::new(vec![m, len], data)?;
        Ok(self.push_op(value, Op::SliceCols { input: x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat_cols: no inputs"))?;
        let (m, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != m {
                return Err(Error::shape(format!("concat_cols: row counts {m} and {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &c) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
            }
        }
        let value = Tensor::new(vec![m, total], data)?;
        Ok(self.push_op(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Mean over each consecutive block of `seq` rows: `(B·seq) × d → B × d`.
    pub fn mean_pool(&mut self, x: Var, seq: usize) -> Result<Var> {
        let (rows, d) = self.dims2(x, "mean_pool")?;
        if seq == 0 || rows % seq != 0 {
            return Err(Error::shape(format!("mean_pool: {rows} rows in blocks of {seq}")));
        }
        let b = rows / seq;
        let src = self.value(x).data();
        let mut data = vec![0.0; b * d];
        for (r, row) in src.chunks_exact(d).enumerate() {
            let dst = &mut data[(r / seq) * d..(r / seq + 1) * d];
            dst.iter_mut().zip(row).for_each(|(o, &v)| *o += v / seq as f64);
        }
        let value = Tensor::new(vec![b, d], data)?;
        Ok(self.push_op(value, Op::MeanPool { input: x, seq }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push_op(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push_op(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Inverted dropout: zeroes each entry with probability `p` and scales
    /// survivors by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} outside [0,1)")));
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::shape("dropout: mask length differs from input"));
        }
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push_op(value, Op::Dropout { input: x, mask }, &[x]))
    }

    /// Scaled dot-product attention `softmax(QKᵀ/√d_k)·V`, applied
    /// independently to each consecutive block of `seq` rows. No mask.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, seq: usize) -> Result<Var> {
        let (rows, dk) = self.dims2(q, "attention Q")?;
        let (rk, dk2) = self.dims2(k, "attention K")?;
        let (rv, dv) = self.dims2(v, "attention V")?;
        if rk != rows || rv != rows || dk != dk2 {
            return Err(Error::shape(format!(
                "attention: Q {rows}×{dk}, K {rk}×{dk2}, V {rv}×{dv}"
            )));
        }
        if seq == 0 || rows % seq != 0 {
            return Err(Error::shape(format!("attention: {rows} rows in blocks of {seq}")));
        }
        let inv_sqrt = 1.0 / (dk as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let blocks = rows / seq;
        let mut probs = vec![0.0; blocks * seq * seq];
        let mut out = vec![0.0; rows * dv];
        for b in 0..blocks {
            let qb = &qd[b * seq * dk..(b + 1) * seq * dk];
            let kb = &kd[b * seq * dk..(b + 1) * seq * dk];
            let vb = &vd[b * seq * dv..(b + 1) * seq * dv];
            let pb = &mut probs[b * seq * seq..(b + 1) * seq * seq];
            gemm(MatView::new(qb, seq, dk), MatView::new(kb, seq, dk).t(), pb, 0.0);
            for row in pb.chunks_exact_mut(seq) {
                row.iter_mut().for_each(|s| *s *= inv_sqrt);
                softmax_in_place(row);
            }
            gemm(
                MatView::new(pb, seq, seq),
                MatView::new(vb, seq, dv),
                &mut out[b * seq * dv..(b + 1) * seq * dv],
                0.0,
            );
        }
        let value = Tensor::new(vec![rows, dv], out)?;
        Ok(self.push_op(value, Op::Attention { q, k, v, seq, probs }, &[q, k, v]))
    }

    /// Attention weights of the most recent [`Graph::attention`] node `att`,
    /// one `seq × seq` block per sequence.
    pub fn attention_weights(&self, att: Var) -> Option<&[f64]> {
        match &self.nodes[att.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// A scalar loss node with a precomputed derivative with respect to
    /// every entry of `pred`. Targets are treated as constants.
    pub fn loss_node(&mut self, pred: Var, value: f64, dpred: Vec<f64>) -> Result<Var> {
        if dpred.len() != self.value(pred).len() {
            return Err(Error::shape("loss_node: derivative length differs from prediction"));
        }
        Ok(self.push_op(Tensor::scalar(value), Op::Loss { pred, dpred }, &[pred]))
    }

    /// Propagates `∂loss/∂node` to every node the loss depends on and adds
    /// it to the stored gradient of each `param` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Grads = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        let nodes = &self.nodes;
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let slot = &mut self.leaf_grads[i];
                match slot {
                    Some(t) => t.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *slot = Some(Tensor::new(node.value.shape().to_vec(), g)?),
                }
                continue;
            }
            backprop_node(nodes, node, &g, &mut grads);
        }
        Ok(())
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Runs `f` on the gradient buffer of `v`, allocating it on first use.
/// Skips nodes that do not require gradients.
fn accum(nodes: &[Node], grads: &mut Grads, v: Var, f: impl FnOnce(&mut [f64], &Tensor)) {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return;
    }
    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
    f(buf, &node.value);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut Grads) {
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => unreachable!("leaves are handled by the caller"),
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2().expect("matmul lhs");
            let n = val(*b).shape()[1];
            let bdata = val(*b).data();
            accum(nodes, grads, *a, |buf, _| {
                gemm(MatView::new(g, m, n), MatView::new(bdata, k, n).t(), buf, 1.0)
            });
            let adata = val(*a).data();
            accum(nodes, grads, *b, |buf, _| {
                gemm(MatView::new(adata, m, k).t(), MatView::new(g, m, n), buf, 1.0)
            });
        }
        Op::Add(a, b) => {
            accum(nodes, grads, *a, |buf, _| add_into(buf, g));
            accum(nodes, grads, *b, |buf, _| add_into(buf, g));
        }
        Op::Sub(a, b) => {
            accum(nodes, grads, *a, |buf, _| add_into(buf, g));
            accum(nodes, grads, *b, |buf, _| buf.iter_mut().zip(g).for_each(|(d, s)| *d -= s));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            accum(nodes, grads, *a, |buf, _| {
                buf.iter_mut().zip(g).zip(bv).for_each(|((d, s), y)| *d += s * y)
            });
            accum(nodes, grads, *b, |buf, _| {
                buf.iter_mut().zip(g).zip(av).for_each(|((d, s), x)| *d += s * x)
            });
        }
        Op::AddRowBias(x, bias) => {
            accum(nodes, grads, *x, |buf, _| add_into(buf, g));
            accum(nodes, grads, *bias, |buf, _| {
                let n = buf.len();
                g.chunks_exact(n).for_each(|row| add_into(buf, row));
            });
        }
        Op::AddTiled(x, table) => {
            accum(nodes, grads, *x, |buf, _| add_into(buf, g));
            accum(nodes, grads, *table, |buf, _| {
                let n = buf.len();
                g.chunks_exact(n).for_each(|block| add_into(buf, block));
            });
        }
        Op::Scale(x, c) => {
            accum(nodes, grads, *x, |buf, _| {
                buf.iter_mut().zip(g).for_each(|(d, s)| *d += c * s)
            });
        }
        Op::Act(x, kind) => {
            let y = node.value.data();
            accum(nodes, grads, *x, |buf, _| {
                for ((d, &s), &yv) in buf.iter_mut().zip(g).zip(y) {
                    *d += s * match kind {
                        Activation::Relu => f64::from(u8::from(yv > 0.0)),
                        Activation::Sigmoid => yv * (1.0 - yv),
                        Activation::Tanh => 1.0 - yv * yv,
                    };
                }
            });
        }
        Op::Conv2d { input, kernel, bias, geom, batch } => {
            let (pl, p) = (geom.patch_len(), geom.positions());
            let c_out = val(*kernel).shape()[0];
            let img = geom.c_in * geom.h * geom.w;
            let x = val(*input).data();
            let kern = val(*kernel).data();
            accum(nodes, grads, *bias, |buf, _| {
                for gn in g.chunks_exact(c_out * p) {
                    for (co, plane) in gn.chunks_exact(p).enumerate() {
                        buf[co] += plane.iter().sum::<f64>();
                    }
                }
            });
            let need_k = nodes[kernel.0].requires_grad;
            let need_x = nodes[input.0].requires_grad;
            if !need_k && !need_x {
                return;
            }
            let mut cols = vec![0.0; pl * p];
            for n in 0..*batch {
                let gn = &g[n * c_out * p..(n + 1) * c_out * p];
                if need_k {
                    im2col(&x[n * img..(n + 1) * img], geom, &mut cols);
                    accum(nodes, grads, *kernel, |buf, _| {
                        gemm(MatView::new(gn, c_out, p), MatView::new(&cols, pl, p).t(), buf, 1.0)
                    });
                }
                if need_x {
                    gemm(MatView::new(kern, c_out, pl).t(), MatView::new(gn, c_out, p), &mut cols, 0.0);
                    accum(nodes, grads, *input, |buf, _| {
                        col2im_add(&cols, geom, &mut buf[n * img..(n + 1) * img])
                    });
                }
            }
        }
        Op::MaxPool2d { input, argmax } => {
            accum(nodes, grads, *input, |buf, _| {
                for (&idx, &s) in argmax.iter().zip(g) {
                    buf[idx] += s;
                }
            });
        }
        Op::Reshape(x) => accum(nodes, grads, *x, |buf, _| add_into(buf, g)),
        Op::Transpose(x) => {
            accum(nodes, grads, *x, |buf, xv| {
                let (m, n) = xv.dims2().expect("transpose input");
                for i in 0..m {
                    for j in 0..n {
                        buf[i * n + j] += g[j * m + i];
                    }
                }
            });
        }
        Op::SoftmaxRows(x) => {
            let y = node.value.data();
            let n = node.value.shape()[1];
            accum(nodes, grads, *x, |buf, _| {
                for ((drow, grow), yrow) in buf.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(y.chunks_exact(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((d, &gs), &ys) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += ys * (gs - dot);
                    }
                }
            });
        }
        Op::LayerNorm { input, gain, shift, xhat, inv_std } => {
            let d = val(*gain).len();
            let gv = val(*gain).data();
            accum(nodes, grads, *shift, |buf, _| g.chunks_exact(d).for_each(|row| add_into(buf, row)));
            accum(nodes, grads, *gain, |buf, _| {
                for (grow, xrow) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    buf.iter_mut().zip(grow).zip(xrow).for_each(|((b, s), x)| *b += s * x);
                }
            });
            accum(nodes, grads, *input, |buf, _| {
                let df = d as f64;
                for (i, (drow, grow)) in buf.chunks_exact_mut(d).zip(g.chunks_exact(d)).enumerate() {
                    let xrow = &xhat[i * d..(i + 1) * d];
                    let dxhat: Vec<f64> = grow.iter().zip(gv).map(|(a, b)| a * b).collect();
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dx: f64 = dxhat.iter().zip(xrow).map(|(a, b)| a * b).sum();
                    let scale = inv_std[i] / df;
                    for j in 0..d {
                        drow[j] += scale * (df * dxhat[j] - sum_d - xrow[j] * sum_dx);
                    }
                }
            });
        }
        Op::SliceCols { input, start } => {
            let len = node.value.shape()[1];
            accum(nodes, grads, *input, |buf, xv| {
                let n = xv.shape()[1];
                for (i, grow) in g.chunks_exact(len).enumerate() {
                    add_into(&mut buf[i * n + start..i * n + start + len], grow);
                }
            });
        }
        Op::ConcatCols(parts) => {
            let total = node.value.shape()[1];
            let mut offset = 0;
            for &p in parts {
                let c = val(p).shape()[1];
                accum(nodes, grads, p, |buf, _| {
                    for (i, drow) in buf.chunks_exact_mut(c).enumerate() {
                        add_into(drow, &g[i * total + offset..i * total + offset + c]);
                    }
                });
                offset += c;
            }
        }
        Op::MeanPool { input, seq } => {
            let d = node.value.shape()[1];
            accum(nodes, grads, *input, |buf, _| {
                for (r, drow) in buf.chunks_exact_mut(d).enumerate() {
                    let grow = &g[(r / seq) * d..(r / seq + 1) * d];
                    drow.iter_mut().zip(grow).for_each(|(a, s)| *a += s / *seq as f64);
                }
            });
        }
        Op::Sum(x) => accum(nodes, grads, *x, |buf, _| buf.iter_mut().for_each(|d| *d += g[0])),
        Op::Mean(x) => accum(nodes, grads, *x, |buf, _| {
            let n = buf.len() as f64;
            buf.iter_mut().for_each(|d| *d += g[0] / n)
        }),
        Op::Dropout { input, mask } => {
            accum(nodes, grads, *input, |buf, _| {
                buf.iter_mut().zip(g).zip(mask).for_each(|((d, s), m)| *d += s * m)
            });
        }
        Op::Attention { q, k, v, seq, probs } => {
            let seq = *seq;
            let dk = val(*q).shape()[1];
            let dv = val(*v).shape()[1];
            let inv_sqrt = 1.0 / (dk as f64).sqrt();
            let blocks = node.value.shape()[0] / seq;
            let (qd, kd, vd) = (val(*q).data(), val(*k).data(), val(*v).data());
            let mut dp = vec![0.0; seq * seq];
            for b in 0..blocks {
                let pb = &probs[b * seq * seq..(b + 1) * seq * seq];
                let gb = &g[b * seq * dv..(b + 1) * seq * dv];
                let vb = &vd[b * seq * dv..(b + 1) * seq * dv];
                accum(nodes, grads, *v, |buf, _| {
                    gemm(
                        MatView::new(pb, seq, seq).t(),
                        MatView::new(gb, seq, dv),
                        &mut buf[b * seq * dv..(b + 1) * seq * dv],
                        1.0,
                    )
                });
                gemm(MatView::new(gb, seq, dv), MatView::new(vb, seq, dv).t(), &mut dp, 0.0);
                for (drow, prow) in dp.chunks_exact_mut(seq).zip(pb.chunks_exact(seq)) {
                    let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                    for (d, &pv) in drow.iter_mut().zip(prow) {
                        *d = pv * (*d - dot) * inv_sqrt;
                    }
                }
                let qb = &qd[b * seq * dk..(b + 1) * seq * dk];
                let kb = &kd[b * seq * dk..(b + 1) * seq * dk];
                accum(nodes, grads, *q, |buf, _| {
                    gemm(
                        MatView::new(&dp, seq, seq),
                        MatView::new(kb, seq, dk),
                        &mut buf[b * seq * dk..(b + 1) * seq * dk],
                        1.0,
                    )
                });
                accum(nodes, grads, *k, |buf, _| {
                    gemm(
                        MatView::new(&dp, seq, seq).t(),
                        MatView::new(qb, seq, dk),
                        &mut buf[b * seq * dk..(b + 1) * seq * dk],
                        1.0,
                    )
                });
            }
        }
        Op::Loss { pred, dpred } => {
            accum(nodes, grads, *pred, |buf, _| {
                buf.iter_mut().zip(dpred).for_each(|(d, s)| *d += g[0] * s)
            });
        }
    }
}
