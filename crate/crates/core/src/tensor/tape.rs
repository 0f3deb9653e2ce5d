//! Define-by-run operation tape.
//!
//! Every differentiable op appends one record holding its inputs, the
//! produced output and the data needed by its backward rule. Records are
//! append-only, so each record's inputs precede it on the tape and a
//! single reverse sweep visits each record exactly once.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{CoreError, Result};
use crate::math;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

enum Op {
    Leaf,
    Matmul {
        a: TensorId,
        b: TensorId,
    },
    Transpose {
        x: TensorId,
    },
    /// Elementwise add; `b` broadcasts over the leading axes of `a`.
    Add {
        a: TensorId,
        b: TensorId,
    },
    Scale {
        x: TensorId,
        c: f64,
    },
    Mul {
        a: TensorId,
        b: TensorId,
    },
    Relu {
        x: TensorId,
    },
    Softmax {
        x: TensorId,
        axis: usize,
    },
    /// Row-wise softmax over the last axis with disallowed entries at exactly
    /// zero. The zeros in the saved output are all the backward rule needs.
    MaskedSoftmax {
        x: TensorId,
    },
    LogSoftmax {
        x: TensorId,
    },
    LayerNorm {
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    ConcatLast {
        parts: Vec<TensorId>,
    },
    SliceLast {
        x: TensorId,
        start: usize,
    },
    /// Elementwise multiply by a fixed 0 / (1/(1-p)) mask drawn at forward time.
    Dropout {
        x: TensorId,
        mask: Vec<f64>,
    },
    /// Row lookup into a `[vocab, d]` table.
    Gather {
        table: TensorId,
        ids: Vec<usize>,
    },
    Sum {
        x: TensorId,
    },
    /// Scalar `sum_i w[i] * x[i]` with a constant coefficient vector.
    WeightedSum {
        x: TensorId,
        w: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of executed operations; rebuilt for every forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> TensorId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn node(&self, id: TensorId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.node(id).value
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.node(id).value.shape()
    }

    /// Gradient of the last `backward` loss w.r.t. this tensor, if it participates.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.node(id).grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.node(id).requires_grad
    }

    /// Registers a trainable leaf (gradient will be populated by `backward`).
    pub fn param(&mut self, value: &Tensor) -> TensorId {
        self.push(value.clone(), true, Op::Leaf)
    }

    /// Registers a non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.push(value, false, Op::Leaf)
    }

    /// Registers a leaf with explicit grad participation.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> TensorId {
        self.push(value, requires_grad, Op::Leaf)
    }

    fn any_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.node(*id).requires_grad)
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (av, bv) = (&self.node(a).value, &self.node(b).value);
        if av.rank() != 2 || bv.rank() != 2 {
            return Err(CoreError::dim(
                "matmul",
                format!("need rank-2, got {:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let (k2, n) = (bv.shape()[0], bv.shape()[1]);
        if k != k2 {
            return Err(CoreError::dim(
                "matmul",
                format!("inner extents {k} vs {k2}"),
            ));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(av.data(), bv.data(), m, k, n, &mut out);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, rg, Op::Matmul { a, b }))
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let xv = &self.node(x).value;
        if xv.rank() != 2 {
            return Err(CoreError::dim(
                "transpose",
                format!("need rank-2, got {:?}", xv.shape()),
            ));
        }
        let (m, n) = (xv.shape()[0], xv.shape()[1]);
        let src = xv.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.node(x).requires_grad;
        Ok(self.push(Tensor::new(vec![n, m], out)?, rg, Op::Transpose { x }))
    }

    /// `a + b` where `b`'s shape must be a trailing suffix of `a`'s shape.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (av, bv) = (&self.node(a).value, &self.node(b).value);
        if !is_suffix(bv.shape(), av.shape()) {
            return Err(CoreError::dim(
                "add",
                format!("{:?} not broadcastable into {:?}", bv.shape(), av.shape()),
            ));
        }
        let bn = bv.numel();
        let mut out = av.data().to_vec();
        let bd = bv.data();
        for (i, v) in out.iter_mut().enumerate() {
            *v += bd[i % bn];
        }
        let shape = av.shape().to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> Result<TensorId> {
        let xv = &self.node(x).value;
        let out: Vec<f64> = xv.data().iter().map(|v| v * c).collect();
        let shape = xv.shape().to_vec();
        let rg = self.node(x).requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Scale { x, c }))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (av, bv) = (&self.node(a).value, &self.node(b).value);
        if av.shape() != bv.shape() {
            return Err(CoreError::dim(
                "mul",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let out: Vec<f64> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = av.shape().to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Mul { a, b }))
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        let xv = &self.node(x).value;
        let out: Vec<f64> = xv
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        let shape = xv.shape().to_vec();
        let rg = self.node(x).requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Relu { x }))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let xv = &self.node(x).value;
        if xv.rank() == 0 || axis >= xv.rank() {
            return Err(CoreError::dim(
                "softmax",
                format!("axis {axis} out of range for shape {:?}", xv.shape()),
            ));
        }
        let shape = xv.shape().to_vec();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..axis_len {
                    max = max.max(src[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..axis_len {
                    let e = math::exp(src[base + j * inner] - max);
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..axis_len {
                    out[base + j * inner] /= sum;
                }
            }
        }
        let rg = self.node(x).requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Softmax { x, axis }))
    }

    /// Row-wise softmax over the last axis of a rank-2 tensor; entries with
    /// `allow == false` get exactly zero weight (the -1e9 surrogate added
    /// before a plain softmax underflows to the same zeros, but computing
    /// over the allowed set directly makes the invariant exact by
    /// construction). Errors if any row has no allowed entry.
    pub fn masked_softmax(&mut self, x: TensorId, allow: &[bool]) -> Result<TensorId> {
        let xv = &self.node(x).value;
        if xv.rank() != 2 {
            return Err(CoreError::dim(
                "masked_softmax",
                format!("need rank-2, got {:?}", xv.shape()),
            ));
        }
        let (rows, cols) = (xv.shape()[0], xv.shape()[1]);
        if allow.len() != rows * cols {
            return Err(CoreError::dim(
                "masked_softmax",
                format!("mask len {} vs {}x{}", allow.len(), rows, cols),
            ));
        }
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let base = r * cols;
            let mut max = f64::NEG_INFINITY;
            for c in 0..cols {
                if allow[base + c] {
                    max = max.max(src[base + c]);
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(CoreError::FullyMaskedRow { row: r });
            }
            let mut sum = 0.0;
            for c in 0..cols {
                if allow[base + c] {
                    let e = math::exp(src[base + c] - max);
                    out[base + c] = e;
                    sum += e;
                }
            }
            for c in 0..cols {
                out[base + c] /= sum;
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.node(x).requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::MaskedSoftmax { x }))
    }

    /// Log-softmax over the last axis of a rank-2 tensor.
    pub fn log_softmax(&mut self, x: TensorId) -> Result<TensorId> {
        let xv = &self.node(x).value;
        if xv.rank() != 2 {
            return Err(CoreError::dim(
                "log_softmax",
                format!("need rank-2, got {:?}", xv.shape()),
            ));
        }
        let (rows, cols) = (xv.shape()[0], xv.shape()[1]);
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let base = r * cols;
            let mut max = f64::NEG_INFINITY;
            for c in 0..cols {
                max = max.max(src[base + c]);
            }
            let mut sum = 0.0;
            for c in 0..cols {
                sum += math::exp(src[base + c] - max);
            }
            let log_z = max + math::ln(sum);
            for c in 0..cols {
                out[base + c] = src[base + c] - log_z;
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.node(x).requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::LogSoftmax { x }))
    }

    /// Layer normalization over the last (feature) axis, then affine with
    /// `gain` and `bias` of shape `[d]`.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let xv = &self.node(x).value;
        let d = xv.last_dim();
        let gv = &self.node(gain).value;
        let bv = &self.node(bias).value;
        if gv.numel() != d || bv.numel() != d {
            return Err(CoreError::dim(
                "layer_norm",
                format!("gain/bias {}/{} vs feature dim {d}", gv.numel(), bv.numel()),
            ));
        }
        let lanes = xv.numel() / d;
        let src = xv.data();
        let (gd, bd) = (gv.data().to_vec(), bv.data().to_vec());
        let mut out = vec![0.0; src.len()];
        let mut means = vec![0.0; lanes];
        let mut rstds = vec![0.0; lanes];
        for l in 0..lanes {
            let base = l * d;
            let lane = &src[base..base + d];
            let mean = lane.iter().sum::<f64>() / d as f64;
            let var = lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / math::sqrt(var + eps);
            means[l] = mean;
            rstds[l] = rstd;
            for i in 0..d {
                out[base + i] = (lane[i] - mean) * rstd * gd[i] + bd[i];
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.any_grad(&[x, gain, bias]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean: means,
                rstd: rstds,
            },
        ))
    }

    /// Concatenates along the last axis; all parts must agree on leading extents.
    pub fn concat_last(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(CoreError::Usage(
                "concat_last needs at least one part".into(),
            ));
        }
        let first = &self.node(parts[0]).value;
        let lead = first.shape()[..first.rank() - 1].to_vec();
        let lanes = first.rows();
        let mut total_last = 0;
        for &p in parts {
            let pv = &self.node(p).value;
            if pv.rank() == 0 || pv.shape()[..pv.rank() - 1] != lead[..] {
                return Err(CoreError::dim(
                    "concat_last",
                    format!(
                        "leading extents differ: {:?} vs {:?}",
                        pv.shape(),
                        first.shape()
                    ),
                ));
            }
            total_last += pv.last_dim();
        }
        let mut out = vec![0.0; lanes * total_last];
        let mut offset = 0;
        for &p in parts {
            let pv = &self.node(p).value;
            let w = pv.last_dim();
            for l in 0..lanes {
                out[l * total_last + offset..l * total_last + offset + w]
                    .copy_from_slice(&pv.data()[l * w..(l + 1) * w]);
            }
            offset += w;
        }
        let mut shape = lead;
        shape.push(total_last);
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::ConcatLast {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Binary convenience form of [`Tape::concat_last`].
    pub fn concat_last_axis(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.concat_last(&[a, b])
    }

    /// Contiguous sub-range of the last axis.
    pub fn slice_last(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let xv = &self.node(x).value;
        let d = xv.last_dim();
        if start + len > d || len == 0 {
            return Err(CoreError::dim(
                "slice_last",
                format!("range {start}..{} of {d}", start + len),
            ));
        }
        let lanes = xv.rows();
        let mut out = vec![0.0; lanes * len];
        for l in 0..lanes {
            out[l * len..(l + 1) * len]
                .copy_from_slice(&xv.data()[l * d + start..l * d + start + len]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let rg = self.node(x).requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::SliceLast { x, start }))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`; eval mode is
    /// the identity.
    pub fn dropout(
        &mut self,
        x: TensorId,
        p: f64,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<TensorId> {
        if !(0.0..1.0).contains(&p) {
            return Err(CoreError::Config(format!(
                "dropout p must be in [0, 1), got {p}"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.node(x).value.numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let xv = &self.node(x).value;
        let out: Vec<f64> = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = xv.shape().to_vec();
        let rg = self.node(x).requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Dropout { x, mask }))
    }

    /// Embedding lookup: rows of a `[vocab, d]` table.
    pub fn gather(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let tv = &self.node(table).value;
        if tv.rank() != 2 {
            return Err(CoreError::dim(
                "gather",
                format!("table must be rank-2, got {:?}", tv.shape()),
            ));
        }
        let (vocab, d) = (tv.shape()[0], tv.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(CoreError::Usage(format!(
                "gather id {bad} out of range (vocab {vocab})"
            )));
        }
        if ids.is_empty() {
            return Err(CoreError::Usage("gather needs at least one id".into()));
        }
        let mut out = vec![0.0; ids.len() * d];
        for (t, &i) in ids.iter().enumerate() {
            out[t * d..(t + 1) * d].copy_from_slice(&tv.data()[i * d..(i + 1) * d]);
        }
        let rg = self.node(table).requires_grad;
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            rg,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let s: f64 = self.node(x).value.data().iter().sum();
        let rg = self.node(x).requires_grad;
        Ok(self.push(Tensor::scalar(s), rg, Op::Sum { x }))
    }

    /// `sum_i w[i] * x[i]` with constant coefficients, as a rank-0 scalar.
    pub fn weighted_sum(&mut self, x: TensorId, w: &[f64]) -> Result<TensorId> {
        let xv = &self.node(x).value;
        if w.len() != xv.numel() {
            return Err(CoreError::dim(
                "weighted_sum",
                format!("{} coefficients for {} elements", w.len(), xv.numel()),
            ));
        }
        let s: f64 = xv.data().iter().zip(w).map(|(a, b)| a * b).sum();
        let rg = self.node(x).requires_grad;
        Ok(self.push(Tensor::scalar(s), rg, Op::WeightedSum { x, w: w.to_vec() }))
    }

    /// `x @ w + b`, the fully-connected layer.
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Populates gradients of every grad-requiring tensor reachable from a
    /// scalar `loss`; accumulation is additive across fan-out.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.node(loss).value.numel() != 1 {
            return Err(CoreError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).value.shape()
            )));
        }
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let g = self.nodes[i].grad.take().unwrap();
            self.apply_backward(i, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, delta: &[f64]) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        let grad = node
            .grad
            .get_or_insert_with(|| vec![0.0; node.value.numel()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn accumulate_fn(&mut self, id: TensorId, fill: impl FnOnce(&mut [f64], &Tape)) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let n = self.nodes[id.0].value.numel();
        let mut delta = vec![0.0; n];
        fill(&mut delta, self);
        self.accumulate(id, &delta);
    }

    fn apply_backward(&mut self, i: usize, g: &[f64]) {
        // The op is cheap to move out and back; avoids aliasing &self.nodes.
        let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, n) = {
                    let s = self.nodes[i].value.shape();
                    (s[0], s[1])
                };
                let k = self.node(*a).value.shape()[1];
                self.accumulate_fn(*a, |da, t| {
                    // dA = G . B^T
                    let bd = t.node(*b).value.data();
                    for r in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[r * n + j] * bd[p * n + j];
                            }
                            da[r * k + p] = s;
                        }
                    }
                });
                self.accumulate_fn(*b, |db, t| {
                    // dB = A^T . G
                    let ad = t.node(*a).value.data();
                    for r in 0..m {
                        for p in 0..k {
                            let av = ad[r * k + p];
                            if av != 0.0 {
                                for j in 0..n {
                                    db[p * n + j] += av * g[r * n + j];
                                }
                            }
                        }
                    }
                });
            }
            Op::Transpose { x } => {
                let (n, m) = {
                    let s = self.nodes[i].value.shape();
                    (s[0], s[1])
                };
                self.accumulate_fn(*x, |dx, _| {
                    for r in 0..n {
                        for c in 0..m {
                            dx[c * n + r] = g[r * m + c];
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                self.accumulate(*a, g);
                let bn = self.node(*b).value.numel();
                self.accumulate_fn(*b, |db, _| {
                    for (idx, gv) in g.iter().enumerate() {
                        db[idx % bn] += gv;
                    }
                });
            }
            Op::Scale { x, c } => {
                let c = *c;
                self.accumulate_fn(*x, |dx, _| {
                    for (d, gv) in dx.iter_mut().zip(g) {
                        *d = c * gv;
                    }
                });
            }
            Op::Mul { a, b } => {
                self.accumulate_fn(*a, |da, t| {
                    for ((d, gv), bv) in da.iter_mut().zip(g).zip(t.node(*b).value.data()) {
                        *d = gv * bv;
                    }
                });
                self.accumulate_fn(*b, |db, t| {
                    for ((d, gv), av) in db.iter_mut().zip(g).zip(t.node(*a).value.data()) {
                        *d = gv * av;
                    }
                });
            }
            Op::Relu { x } => {
                self.accumulate_fn(*x, |dx, t| {
                    for ((d, gv), xv) in dx.iter_mut().zip(g).zip(t.node(*x).value.data()) {
                        *d = if *xv > 0.0 { *gv } else { 0.0 };
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let shape = self.nodes[i].value.shape().to_vec();
                let axis = *axis;
                let axis_len = shape.get(axis).copied().unwrap_or(1);
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..axis].iter().product();
                let w = self.nodes[i].value.data().to_vec();
                self.accumulate_fn(*x, |dx, _| {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let base = o * axis_len * inner + ii;
                            let mut dot = 0.0;
                            for j in 0..axis_len {
                                let idx = base + j * inner;
                                dot += g[idx] * w[idx];
                            }
                            for j in 0..axis_len {
                                let idx = base + j * inner;
                                dx[idx] = w[idx] * (g[idx] - dot);
                            }
                        }
                    }
                });
            }
            Op::MaskedSoftmax { x } => {
                // Masked weights are exactly zero, so the plain softmax
                // Jacobian already sends zero gradient to masked scores.
                let (rows, cols) = {
                    let s = self.nodes[i].value.shape();
                    (s[0], s[1])
                };
                let w = self.nodes[i].value.data().to_vec();
                self.accumulate_fn(*x, |dx, _| {
                    for r in 0..rows {
                        let base = r * cols;
                        let mut dot = 0.0;
                        for c in 0..cols {
                            dot += g[base + c] * w[base + c];
                        }
                        for c in 0..cols {
                            dx[base + c] = w[base + c] * (g[base + c] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax { x } => {
                let (rows, cols) = {
                    let s = self.nodes[i].value.shape();
                    (s[0], s[1])
                };
                let ls = self.nodes[i].value.data().to_vec();
                self.accumulate_fn(*x, |dx, _| {
                    for r in 0..rows {
                        let base = r * cols;
                        let gsum: f64 = g[base..base + cols].iter().sum();
                        for c in 0..cols {
                            dx[base + c] = g[base + c] - math::exp(ls[base + c]) * gsum;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            } => {
                let d = self.node(*x).value.last_dim();
                let lanes = mean.len();
                self.accumulate_fn(*x, |dx, t| {
                    let src = t.node(*x).value.data();
                    let gd = t.node(*gain).value.data();
                    for l in 0..lanes {
                        let base = l * d;
                        let (mu, rs) = (mean[l], rstd[l]);
                        let mut m1 = 0.0; // mean of dxhat
                        let mut m2 = 0.0; // mean of dxhat * xhat
                        for k in 0..d {
                            let xhat = (src[base + k] - mu) * rs;
                            let dxhat = g[base + k] * gd[k];
                            m1 += dxhat;
                            m2 += dxhat * xhat;
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for k in 0..d {
                            let xhat = (src[base + k] - mu) * rs;
                            let dxhat = g[base + k] * gd[k];
                            dx[base + k] = rs * (dxhat - m1 - xhat * m2);
                        }
                    }
                });
                self.accumulate_fn(*gain, |dg, t| {
                    let src = t.node(*x).value.data();
                    for l in 0..lanes {
                        let base = l * d;
                        for k in 0..d {
                            let xhat = (src[base + k] - mean[l]) * rstd[l];
                            dg[k] += g[base + k] * xhat;
                        }
                    }
                });
                self.accumulate_fn(*bias, |db, _| {
                    for l in 0..lanes {
                        for k in 0..d {
                            db[k] += g[l * d + k];
                        }
                    }
                });
            }
            Op::ConcatLast { parts } => {
                let total = self.nodes[i].value.last_dim();
                let lanes = self.nodes[i].value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.node(p).value.last_dim();
                    self.accumulate_fn(p, |dp, _| {
                        for l in 0..lanes {
                            dp[l * w..(l + 1) * w]
                                .copy_from_slice(&g[l * total + offset..l * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceLast { x, start } => {
                let len = self.nodes[i].value.last_dim();
                let d = self.node(*x).value.last_dim();
                let lanes = self.node(*x).value.rows();
                let start = *start;
                self.accumulate_fn(*x, |dx, _| {
                    for l in 0..lanes {
                        dx[l * d + start..l * d + start + len]
                            .copy_from_slice(&g[l * len..(l + 1) * len]);
                    }
                });
            }
            Op::Dropout { x, mask } => {
                self.accumulate_fn(*x, |dx, _| {
                    for ((d, gv), m) in dx.iter_mut().zip(g).zip(mask) {
                        *d = gv * m;
                    }
                });
            }
            Op::Gather { table, ids } => {
                let d = self.node(*table).value.last_dim();
                self.accumulate_fn(*table, |dt, _| {
                    for (t, &row) in ids.iter().enumerate() {
                        for k in 0..d {
                            dt[row * d + k] += g[t * d + k];
                        }
                    }
                });
            }
            Op::Sum { x } => {
                self.accumulate_fn(*x, |dx, _| {
                    dx.fill(g[0]);
                });
            }
            Op::WeightedSum { x, w } => {
                self.accumulate_fn(*x, |dx, _| {
                    for (d, wv) in dx.iter_mut().zip(w) {
                        *d = g[0] * wv;
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }
}

/// `b`'s shape is a trailing suffix of `a`'s shape.
fn is_suffix(b: &[usize], a: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

/// Plain triple loop in cache-friendly order.
fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                let brow = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}
