//! Tape of tensor operations with hand-written backward rules.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list visits every consumer before its inputs.

use std::ops::Range;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Softmax(Var),
    Concat(Vec<Var>, Axis),
    Slice {
        x: Var,
        rows: Range<usize>,
        cols: Range<usize>,
    },
    Embed {
        table: Var,
        indices: Vec<usize>,
        through: Option<Var>,
    },
    Attention {
        logits: Var,
        hs: Vec<Var>,
        weights: Vec<f64>,
    },
    Diversity {
        m: Var,
        b_dim: usize,
        c_dim: usize,
        /// `exp(-L1)` per unordered row pair and kernel, in loop order.
        kernels: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        scale: Var,
        shift: Var,
        x_hat: Tensor,
        inv_std: Vec<f64>,
    },
    LogSigmoid(Var),
    MeanAll(Var),
    MeanRows(Var),
    Kl {
        p: Var,
        q: Vec<f64>,
        eps: f64,
    },
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

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

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, rg, op)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", format!("({m},{k}) x ({k2},{n})")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            0.0,
        );
        Ok(self.push_op(Tensor::matrix(m, n, out), &[a, b], Op::MatMul(a, b)))
    }

    /// `x + bias` with `bias` of shape `(1, n)` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(bias) != (1, c) {
            return Err(shape_err(
                "add_row",
                format!("({r},{c}) + {:?}", self.dims(bias)),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, bb) in row.iter_mut().zip(&b) {
                *o += bb;
            }
        }
        Ok(self.push_op(out, &[x, bias], Op::AddRow(x, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push_op(out, &[a, b], Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let bv = self.value(b).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(bv)
            .map(|(x, y)| x * y)
            .collect();
        let (r, c) = self.dims(a);
        Ok(self.push_op(Tensor::matrix(r, c, data), &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push_op(out, &[x], Op::Scale(x, s))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push_op(out, &[x], Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push_op(out, &[x], Op::Sigmoid(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push_op(out, &[x], Op::LeakyRelu(x, slope))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(c.max(1)).take(r) {
            softmax_in_place(row);
        }
        self.push_op(out, &[x], Op::Softmax(x))
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let out = match axis {
            Axis::Cols => {
                let rows = self.dims(parts[0]).0;
                if parts.iter().any(|&p| self.dims(p).0 != rows) {
                    return Err(shape_err("concat", "row counts differ".into()));
                }
                let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
                Tensor::matrix(rows, total, data)
            }
            Axis::Rows => {
                let cols = self.dims(parts[0]).1;
                if parts.iter().any(|&p| self.dims(p).1 != cols) {
                    return Err(shape_err("concat", "column counts differ".into()));
                }
                let total: usize = parts.iter().map(|&p| self.dims(p).0).sum();
                let mut data = Vec::with_capacity(total * cols);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::matrix(total, cols, data)
            }
        };
        Ok(self.push_op(out, parts, Op::Concat(parts.to_vec(), axis)))
    }

    pub fn slice(&mut self, x: Var, rows: Range<usize>, cols: Range<usize>) -> Result<Var> {
        let (r, c) = self.dims(x);
        if rows.end > r || cols.end > c || rows.start > rows.end || cols.start > cols.end {
            return Err(shape_err(
                "slice",
                format!("{rows:?} x {cols:?} out of ({r},{c})"),
            ));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for rr in rows.clone() {
            data.extend_from_slice(&src.row_slice(rr)[cols.clone()]);
        }
        let out = Tensor::matrix(rows.len(), cols.len(), data);
        Ok(self.push_op(out, &[x], Op::Slice { x, rows, cols }))
    }

    /// Rows of `table` selected by `indices`.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        self.embed(table, indices.to_vec(), None)
    }

    /// Rows of `table` at the argmax of each row of `probs`. The backward pass
    /// treats the hard selection as the identity, sending `grad * table^T` to
    /// `probs` (straight-through).
    pub fn straight_through_embed(&mut self, probs: Var, table: Var) -> Result<Var> {
        let (_, k) = self.dims(probs);
        if self.dims(table).0 != k {
            return Err(shape_err(
                "straight_through_embed",
                format!("{k} categories vs table {:?}", self.dims(table)),
            ));
        }
        let indices = self.value(probs).argmax_rows();
        self.embed(table, indices, Some(probs))
    }

    fn embed(&mut self, table: Var, indices: Vec<usize>, through: Option<Var>) -> Result<Var> {
        let (k, n) = self.dims(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
            return Err(shape_err("embedding", format!("index {bad} >= {k}")));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in &indices {
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::matrix(indices.len(), n, data);
        let mut inputs = vec![table];
        inputs.extend(through);
        Ok(self.push_op(
            out,
            &inputs,
            Op::Embed {
                table,
                indices,
                through,
            },
        ))
    }

    /// `sum_k softmax(logits)_k * hs[k]`; `logits` has shape `(1, hs.len())`.
    pub fn attention(&mut self, logits: Var, hs: &[Var]) -> Result<Var> {
        let t = hs.len();
        if t == 0 {
            return Err(shape_err("attention", "empty history".into()));
        }
        if self.dims(logits) != (1, t) {
            return Err(Error::LengthMismatch {
                expected: t,
                got: self.value(logits).len(),
            });
        }
        let shape = self.dims(hs[0]);
        if hs.iter().any(|&h| self.dims(h) != shape) {
            return Err(shape_err("attention", "history shapes differ".into()));
        }
        let mut weights = self.value(logits).data().to_vec();
        softmax_in_place(&mut weights);
        let mut out = Tensor::zeros(shape.0, shape.1);
        for (&h, &w) in hs.iter().zip(&weights) {
            for (o, x) in out.data_mut().iter_mut().zip(self.value(h).data()) {
                *o += w * x;
            }
        }
        let mut inputs = vec![logits];
        inputs.extend_from_slice(hs);
        Ok(self.push_op(
            out,
            &inputs,
            Op::Attention {
                logits,
                hs: hs.to_vec(),
                weights,
            },
        ))
    }

    /// Mini-batch diversity features. `m` has shape `(B, b_dim * c_dim)`; each
    /// row reshapes to `b_dim` kernels of length `c_dim`. Output `(B, b_dim)`
    /// with entry `(i, b) = sum_{j != i} exp(-||M_ib - M_jb||_1)`.
    pub fn diversity(&mut self, m: Var, b_dim: usize, c_dim: usize) -> Result<Var> {
        let (batch, width) = self.dims(m);
        if width != b_dim * c_dim {
            return Err(shape_err(
                "diversity",
                format!("width {width} != {b_dim} x {c_dim}"),
            ));
        }
        if batch < 2 {
            return Err(Error::BatchTooSmall(batch));
        }
        let mv = self.value(m).data();
        let mut out = vec![0.0; batch * b_dim];
        let mut kernels = Vec::with_capacity(batch * (batch - 1) / 2 * b_dim);
        for i in 0..batch {
            let ri = &mv[i * width..(i + 1) * width];
            for j in (i + 1)..batch {
                let rj = &mv[j * width..(j + 1) * width];
                for (b, (ki, kj)) in ri.chunks_exact(c_dim).zip(rj.chunks_exact(c_dim)).enumerate() {
                    let dist: f64 = ki.iter().zip(kj).map(|(x, y)| (x - y).abs()).sum();
                    let e = (-dist).exp();
                    kernels.push(e);
                    out[i * b_dim + b] += e;
                    out[j * b_dim + b] += e;
                }
            }
        }
        Ok(self.push_op(
            Tensor::matrix(batch, b_dim, out),
            &[m],
            Op::Diversity {
                m,
                b_dim,
                c_dim,
                kernels,
            },
        ))
    }

    /// Training-mode batch normalization over rows with per-feature `scale`/`shift`.
    pub fn batch_norm(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let (b, n) = self.dims(x);
        if b < 2 {
            return Err(Error::BatchTooSmall(b));
        }
        if self.dims(scale) != (1, n) || self.dims(shift) != (1, n) {
            return Err(shape_err("batch_norm", "scale/shift must be (1, n)".into()));
        }
        let xv = self.value(x);
        let mut mean = vec![0.0; n];
        for r in 0..b {
            for (m, v) in mean.iter_mut().zip(xv.row_slice(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= b as f64);
        let mut var = vec![0.0; n];
        for r in 0..b {
            for ((s, v), m) in var.iter_mut().zip(xv.row_slice(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|s| 1.0 / (s / b as f64 + BN_EPS).sqrt())
            .collect();
        let mut x_hat = Tensor::zeros(b, n);
        for r in 0..b {
            let src = xv.row_slice(r);
            let dst = &mut x_hat.data_mut()[r * n..(r + 1) * n];
            for c in 0..n {
                dst[c] = (src[c] - mean[c]) * inv_std[c];
            }
        }
        let sc = self.value(scale).data();
        let sh = self.value(shift).data();
        let mut out = x_hat.clone();
        for row in out.data_mut().chunks_mut(n) {
            for c in 0..n {
                row[c] = row[c] * sc[c] + sh[c];
            }
        }
        Ok(self.push_op(
            out,
            &[x, scale, shift],
            Op::BatchNorm {
                x,
                scale,
                shift,
                x_hat,
                inv_std,
            },
        ))
    }

    /// Elementwise `ln sigmoid(x)`, evaluated without overflow.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(log_sigmoid);
        self.push_op(out, &[x], Op::LogSigmoid(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mean = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        self.push_op(Tensor::scalar(mean), &[x], Op::MeanAll(x))
    }

    /// Column means, shape `(1, n)`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let t = self.value(x);
        let mut out = vec![0.0; c];
        for rr in 0..r {
            for (o, v) in out.iter_mut().zip(t.row_slice(rr)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r.max(1) as f64);
        self.push_op(Tensor::row(out), &[x], Op::MeanRows(x))
    }

    /// `sum_k p_k ln((p_k + eps) / (q_k + eps))` against a fixed reference `q`.
    pub fn kl_to(&mut self, p: Var, q: &[f64], eps: f64) -> Result<Var> {
        let pv = self.value(p).data();
        if pv.len() != q.len() {
            return Err(Error::LengthMismatch {
                expected: q.len(),
                got: pv.len(),
            });
        }
        let val = kl_divergence_raw(pv, q, eps);
        Ok(self.push_op(
            Tensor::scalar(val),
            &[p],
            Op::Kl {
                p,
                q: q.to_vec(),
                eps,
            },
        ))
    }

    /// Mean softmax cross-entropy of `logits` `(B, K)` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, k) = self.dims(logits);
        if labels.len() != b {
            return Err(Error::LengthMismatch {
                expected: b,
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(shape_err("softmax_cross_entropy", format!("label {bad} >= {k}")));
        }
        let mut probs = self.value(logits).clone();
        let mut loss = 0.0;
        for (r, row) in probs.data_mut().chunks_mut(k).enumerate() {
            softmax_in_place(row);
            loss -= row[labels[r]].max(f64::MIN_POSITIVE).ln();
        }
        Ok(self.push_op(
            Tensor::scalar(loss / b as f64),
            &[logits],
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.dims(a), self.dims(b)),
            ));
        }
        Ok(())
    }

    /// Back-propagates from a `(1, 1)` node. Gradients accumulate into every
    /// node that requires them and stay readable through [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", "loss must be a scalar".into()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.backward_node(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, t) in contributions {
                self.accumulate(v, t);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(existing) => existing.add_assign(&g),
            None => node.grad = Some(g),
        }
    }

    fn backward_node(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let y = &node.value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, self.value(*b).data(), true, &mut ga, 0.0);
                    out.push((*a, Tensor::matrix(m, k, ga)));
                }
                if rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, g.data(), false, &mut gb, 0.0);
                    out.push((*b, Tensor::matrix(k, n, gb)));
                }
            }
            Op::AddRow(x, bias) => {
                out.push((*x, g.clone()));
                if rg(*bias) {
                    let c = g.cols();
                    let mut gb = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (s, v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    out.push((*bias, Tensor::row(gb)));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    out.push((*a, zip_map(g, self.value(*b), |gg, bb| gg * bb)));
                }
                if rg(*b) {
                    out.push((*b, zip_map(g, self.value(*a), |gg, aa| gg * aa)));
                }
            }
            Op::Scale(x, s) => out.push((*x, g.map(|v| v * s))),
            Op::Tanh(x) => out.push((*x, zip_map(g, y, |gg, yy| gg * (1.0 - yy * yy)))),
            Op::Sigmoid(x) => out.push((*x, zip_map(g, y, |gg, yy| gg * yy * (1.0 - yy)))),
            Op::LeakyRelu(x, slope) => out.push((
                *x,
                zip_map(g, self.value(*x), |gg, xx| if xx > 0.0 { gg } else { gg * slope }),
            )),
            Op::Softmax(x) => {
                let c = y.cols();
                let mut gx = g.clone();
                for (grow, yrow) in gx.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (gg, yy) in grow.iter_mut().zip(yrow) {
                        *gg = yy * (*gg - dot);
                    }
                }
                out.push((*x, gx));
            }
            Op::Concat(parts, axis) => match axis {
                Axis::Cols => {
                    let mut offset = 0;
                    let total = g.cols();
                    for &p in parts {
                        let (r, c) = self.dims(p);
                        if rg(p) {
                            let mut data = Vec::with_capacity(r * c);
                            for rr in 0..r {
                                data.extend_from_slice(
                                    &g.data()[rr * total + offset..rr * total + offset + c],
                                );
                            }
                            out.push((p, Tensor::matrix(r, c, data)));
                        }
                        offset += c;
                    }
                }
                Axis::Rows => {
                    let mut offset = 0;
                    let c = g.cols();
                    for &p in parts {
                        let r = self.dims(p).0;
                        if rg(p) {
                            let data = g.data()[offset * c..(offset + r) * c].to_vec();
                            out.push((p, Tensor::matrix(r, c, data)));
                        }
                        offset += r;
                    }
                }
            },
            Op::Slice { x, rows, cols } => {
                let (r, c) = self.dims(*x);
                let mut gx = Tensor::zeros(r, c);
                let w = cols.len();
                for (k, rr) in rows.clone().enumerate() {
                    gx.data_mut()[rr * c + cols.start..rr * c + cols.end]
                        .copy_from_slice(&g.data()[k * w..(k + 1) * w]);
                }
                out.push((*x, gx));
            }
            Op::Embed {
                table,
                indices,
                through,
            } => {
                let (k, n) = self.dims(*table);
                if rg(*table) {
                    let mut gt = Tensor::zeros(k, n);
                    for (r, &idx) in indices.iter().enumerate() {
                        let dst = &mut gt.data_mut()[idx * n..(idx + 1) * n];
                        for (d, s) in dst.iter_mut().zip(g.row_slice(r)) {
                            *d += s;
                        }
                    }
                    out.push((*table, gt));
                }
                if let Some(p) = through {
                    if rg(*p) {
                        let b = indices.len();
                        let mut gp = vec![0.0; b * k];
                        gemm(b, n, k, g.data(), false, self.value(*table).data(), true, &mut gp, 0.0);
                        out.push((*p, Tensor::matrix(b, k, gp)));
                    }
                }
            }
            Op::Attention {
                logits,
                hs,
                weights,
            } => {
                let mut gw = vec![0.0; hs.len()];
                for (k, &h) in hs.iter().enumerate() {
                    gw[k] = g
                        .data()
                        .iter()
                        .zip(self.value(h).data())
                        .map(|(a, b)| a * b)
                        .sum();
                    if rg(h) {
                        out.push((h, g.map(|v| v * weights[k])));
                    }
                }
                if rg(*logits) {
                    let dot: f64 = gw.iter().zip(weights).map(|(a, b)| a * b).sum();
                    let gl: Vec<f64> = weights
                        .iter()
                        .zip(&gw)
                        .map(|(w, gg)| w * (gg - dot))
                        .collect();
                    out.push((*logits, Tensor::row(gl)));
                }
            }
            Op::Diversity {
                m,
                b_dim,
                c_dim,
                kernels,
            } => {
                let (batch, width) = self.dims(*m);
                let (b_dim, c_dim) = (*b_dim, *c_dim);
                let mv = self.value(*m).data();
                let gd = g.data();
                let mut gm = vec![0.0; batch * width];
                let mut k = 0;
                for i in 0..batch {
                    let ri = &mv[i * width..(i + 1) * width];
                    let gi = &gd[i * b_dim..(i + 1) * b_dim];
                    for j in (i + 1)..batch {
                        let rj = &mv[j * width..(j + 1) * width];
                        let gj = &gd[j * b_dim..(j + 1) * b_dim];
                        let (head, tail) = gm.split_at_mut(j * width);
                        let gmi = &mut head[i * width..(i + 1) * width];
                        let gmj = &mut tail[..width];
                        for b in 0..b_dim {
                            let coef = -(gi[b] + gj[b]) * kernels[k];
                            k += 1;
                            let span = b * c_dim..(b + 1) * c_dim;
                            for (((x, y), a), o) in ri[span.clone()]
                                .iter()
                                .zip(&rj[span.clone()])
                                .zip(&mut gmi[span.clone()])
                                .zip(&mut gmj[span.clone()])
                            {
                                let s = coef * sign(x - y);
                                *a += s;
                                *o -= s;
                            }
                        }
                    }
                }
                out.push((*m, Tensor::matrix(batch, width, gm)));
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                x_hat,
                inv_std,
            } => {
                let (b, n) = self.dims(*x);
                let sc = self.value(*scale).data();
                let mut gscale = vec![0.0; n];
                let mut gshift = vec![0.0; n];
                for r in 0..b {
                    for c in 0..n {
                        let gg = g.data()[r * n + c];
                        gscale[c] += gg * x_hat.data()[r * n + c];
                        gshift[c] += gg;
                    }
                }
                if rg(*x) {
                    let bf = b as f64;
                    let mut gx = Tensor::zeros(b, n);
                    for c in 0..n {
                        // sum(dxhat) = scale * gshift, sum(dxhat * xhat) = scale * gscale
                        let s1 = sc[c] * gshift[c];
                        let s2 = sc[c] * gscale[c];
                        for r in 0..b {
                            let dxh = g.data()[r * n + c] * sc[c];
                            gx.data_mut()[r * n + c] = inv_std[c] / bf
                                * (bf * dxh - s1 - x_hat.data()[r * n + c] * s2);
                        }
                    }
                    out.push((*x, gx));
                }
                out.push((*scale, Tensor::row(gscale)));
                out.push((*shift, Tensor::row(gshift)));
            }
            Op::LogSigmoid(x) => out.push((
                *x,
                zip_map(g, self.value(*x), |gg, xx| gg * sigmoid(-xx)),
            )),
            Op::MeanAll(x) => {
                let t = self.value(*x);
                let v = g.item() / t.len() as f64;
                out.push((*x, Tensor::filled(t.rows(), t.cols(), v)));
            }
            Op::MeanRows(x) => {
                let (r, c) = self.dims(*x);
                let mut gx = Vec::with_capacity(r * c);
                for _ in 0..r {
                    gx.extend(g.data().iter().map(|v| v / r as f64));
                }
                out.push((*x, Tensor::matrix(r, c, gx)));
            }
            Op::Kl { p, q, eps } => {
                let gg = g.item();
                let pv = self.value(*p);
                let gp: Vec<f64> = pv
                    .data()
                    .iter()
                    .zip(q)
                    .map(|(&pk, &qk)| gg * (((pk + eps) / (qk + eps)).ln() + pk / (pk + eps)))
                    .collect();
                out.push((*p, Tensor::matrix(pv.rows(), pv.cols(), gp)));
            }
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            } => {
                let b = labels.len();
                let k = probs.cols();
                let scale = g.item() / b as f64;
                let mut gl = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    gl.data_mut()[r * k + l] -= 1.0;
                }
                gl.scale_assign(scale);
                out.push((*logits, gl));
            }
        }
        out
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::matrix(a.rows(), a.cols(), data)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `sum_k p_k ln((p_k + eps) / (q_k + eps))`; terms with `p_k = 0` vanish.
pub fn kl_divergence_raw(p: &[f64], q: &[f64], eps: f64) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pk, &qk)| {
            if pk == 0.0 {
                0.0
            } else {
                pk * ((pk + eps) / (qk + eps)).ln()
            }
        })
        .sum()
}
