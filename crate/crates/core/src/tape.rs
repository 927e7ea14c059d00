//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves created with
//! `requires_grad = false` (frozen backbone weights, embeddings, masks) are never
//! differentiated, and neither is anything computed only from them.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    ConcatRows(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Tanh(Var),
    RowWeightedSum(Var, Vec<f64>),
    StackRows(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of the given shape when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(rows, cols))
    }
}

const INV_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Tape {
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
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_nt(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulNt(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Adds the `1 × cols` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "add_row bias must be a row vector");
        assert_eq!(b.cols(), self.value(a).cols(), "add_row width");
        let mut value = self.value(a).clone();
        let cols = value.cols();
        for r in 0..value.rows() {
            for c in 0..cols {
                let v = value.get(r, c) + b.get(0, c);
                value.set(r, c, v);
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        self.push(value, Op::AddRow(a, bias), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scaled(c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Tensor) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), mask.shape(), "mul_const shape");
        let data = x.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect();
        let value = Tensor::from_vec(x.rows(), x.cols(), data);
        let rg = self.rg(a);
        self.push(value, Op::MulConst(a, mask), rg)
    }

    /// Stacks `top` above `bottom`. Either may have zero rows.
    pub fn concat_rows(&mut self, top: Var, bottom: Var) -> Var {
        let (t, b) = (self.value(top), self.value(bottom));
        assert_eq!(t.cols(), b.cols(), "concat_rows width");
        let mut data = Vec::with_capacity(t.len() + b.len());
        data.extend_from_slice(t.data());
        data.extend_from_slice(b.data());
        let value = Tensor::from_vec(t.rows() + b.rows(), t.cols(), data);
        let rg = self.rg(top) || self.rg(bottom);
        self.push(value, Op::ConcatRows(top, bottom), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p);
                assert_eq!(src.rows(), rows, "concat_cols height");
                value.row_mut(r)[offset..offset + src.cols()].copy_from_slice(src.row(r));
                offset += src.cols();
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let src = self.value(x);
        assert!(start + len <= src.cols(), "slice_cols out of range");
        let mut value = Tensor::zeros(src.rows(), len);
        for r in 0..src.rows() {
            value.row_mut(r).copy_from_slice(&src.row(r)[start..start + len]);
        }
        let rg = self.rg(x);
        self.push(value, Op::SliceCols { x, start }, rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let mut value = Tensor::zeros(src.rows(), src.cols());
        for r in 0..src.rows() {
            value.row_mut(r).copy_from_slice(&math::softmax(src.row(r)));
        }
        let rg = self.rg(x);
        self.push(value, Op::SoftmaxRows(x), rg)
    }

    /// Row-wise layer normalization with affine `gamma`/`beta` (`1 × cols`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let src = self.value(x);
        let (rows, cols) = src.shape();
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut normalized = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let row = src.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / math::sqrt(var + eps);
            inv_std.push(inv);
            for c in 0..cols {
                let n = (row[c] - mean) * inv;
                normalized.set(r, c, n);
                value.set(r, c, n * g.get(0, c) + b.get(0, c));
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            rg,
        )
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .map(|v| 0.5 * v * (1.0 + math::erf(v * INV_SQRT_2)));
        let rg = self.rg(x);
        self.push(value, Op::Gelu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(math::tanh);
        let rg = self.rg(x);
        self.push(value, Op::Tanh(x), rg)
    }

    /// `Σ_r w_r · x[r, :]` as a `1 × cols` tensor.
    pub fn row_weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Var {
        let src = self.value(x);
        assert_eq!(src.rows(), weights.len(), "row_weighted_sum weights");
        let mut value = Tensor::zeros(1, src.cols());
        for (r, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, v) in value.data_mut().iter_mut().zip(src.row(r)) {
                *o += w * v;
            }
        }
        let rg = self.rg(x);
        self.push(value, Op::RowWeightedSum(x, weights), rg)
    }

    /// Stacks `1 × cols` rows into an `n × cols` tensor.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows needs at least one row");
        let cols = self.value(rows[0]).cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let v = self.value(r);
            assert_eq!(v.shape(), (1, cols), "stack_rows expects row vectors");
            data.extend_from_slice(v.data());
        }
        let value = Tensor::from_vec(rows.len(), cols, data);
        let rg = rows.iter().any(|&r| self.rg(r));
        self.push(value, Op::StackRows(rows.to_vec()), rg)
    }

    /// Back-propagates the given output gradients (summed when a node is seeded
    /// more than once) through every recorded operation.
    pub fn backward(&self, seeds: &[(Var, Tensor)]) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut top = 0;
        for (v, g) in seeds {
            assert_eq!(self.value(*v).shape(), g.shape(), "seed gradient shape");
            if !self.rg(*v) {
                continue;
            }
            accumulate(&mut grads, *v, g.clone());
            top = top.max(v.0 + 1);
        }

        for idx in (0..top).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.matmul_nt(self.value(*b)));
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, self.value(*a).matmul_tn(&g));
                    }
                }
                Op::MatMulNt(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.matmul(self.value(*b)));
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.matmul_tn(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.rg(*bias) {
                        accumulate(&mut grads, *bias, g.sum_rows());
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                }
                Op::Scale(a, c) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.scaled(*c));
                    }
                }
                Op::MulConst(a, mask) => {
                    if self.rg(*a) {
                        let data = g.data().iter().zip(mask.data()).map(|(g, m)| g * m).collect();
                        accumulate(&mut grads, *a, Tensor::from_vec(g.rows(), g.cols(), data));
                    }
                }
                Op::ConcatRows(top_var, bottom_var) => {
                    let split = self.value(*top_var).rows() * g.cols();
                    if self.rg(*top_var) {
                        let t = Tensor::from_vec(
                            self.value(*top_var).rows(),
                            g.cols(),
                            g.data()[..split].to_vec(),
                        );
                        accumulate(&mut grads, *top_var, t);
                    }
                    if self.rg(*bottom_var) {
                        let b = Tensor::from_vec(
                            self.value(*bottom_var).rows(),
                            g.cols(),
                            g.data()[split..].to_vec(),
                        );
                        accumulate(&mut grads, *bottom_var, b);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.rg(p) {
                            let mut part = Tensor::zeros(g.rows(), w);
                            for r in 0..g.rows() {
                                part.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                            }
                            accumulate(&mut grads, p, part);
                        }
                        offset += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    if self.rg(*x) {
                        let src = self.value(*x);
                        let mut full = Tensor::zeros(src.rows(), src.cols());
                        for r in 0..g.rows() {
                            full.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                        }
                        accumulate(&mut grads, *x, full);
                    }
                }
                Op::SoftmaxRows(x) => {
                    if self.rg(*x) {
                        let y = &node.value;
                        let mut dx = Tensor::zeros(y.rows(), y.cols());
                        for r in 0..y.rows() {
                            let yr = y.row(r);
                            let gr = g.row(r);
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                                *o = yr[c] * (gr[c] - dot);
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    let (rows, cols) = g.shape();
                    if self.rg(*beta) {
                        accumulate(&mut grads, *beta, g.sum_rows());
                    }
                    if self.rg(*gamma) {
                        let mut dg = Tensor::zeros(1, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                let v = dg.get(0, c) + g.get(r, c) * normalized.get(r, c);
                                dg.set(0, c, v);
                            }
                        }
                        accumulate(&mut grads, *gamma, dg);
                    }
                    if self.rg(*x) {
                        let gm = self.value(*gamma);
                        let n = cols as f64;
                        let mut dx = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            let mut sum_d = 0.0;
                            let mut sum_dn = 0.0;
                            for c in 0..cols {
                                let d = g.get(r, c) * gm.get(0, c);
                                sum_d += d;
                                sum_dn += d * normalized.get(r, c);
                            }
                            for c in 0..cols {
                                let d = g.get(r, c) * gm.get(0, c);
                                let v = inv_std[r] / n
                                    * (n * d - sum_d - normalized.get(r, c) * sum_dn);
                                dx.set(r, c, v);
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Gelu(x) => {
                    if self.rg(*x) {
                        let src = self.value(*x);
                        let data = src
                            .data()
                            .iter()
                            .zip(g.data())
                            .map(|(&v, &gv)| {
                                let cdf = 0.5 * (1.0 + math::erf(v * INV_SQRT_2));
                                let pdf = INV_SQRT_2PI * math::exp(-0.5 * v * v);
                                gv * (cdf + v * pdf)
                            })
                            .collect();
                        accumulate(&mut grads, *x, Tensor::from_vec(src.rows(), src.cols(), data));
                    }
                }
                Op::Tanh(x) => {
                    if self.rg(*x) {
                        let y = &node.value;
                        let data = y
                            .data()
                            .iter()
                            .zip(g.data())
                            .map(|(&t, &gv)| gv * (1.0 - t * t))
                            .collect();
                        accumulate(&mut grads, *x, Tensor::from_vec(y.rows(), y.cols(), data));
                    }
                }
                Op::RowWeightedSum(x, weights) => {
                    if self.rg(*x) {
                        let cols = g.cols();
                        let mut dx = Tensor::zeros(weights.len(), cols);
                        for (r, &w) in weights.iter().enumerate() {
                            for (o, gv) in dx.row_mut(r).iter_mut().zip(g.row(0)) {
                                *o = w * gv;
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::StackRows(rows) => {
                    for (i, &r) in rows.iter().enumerate() {
                        if self.rg(r) {
                            accumulate(&mut grads, r, Tensor::row_vector(g.row(i).to_vec()));
                        }
                    }
                }
            }
            // Leaves keep their gradient so callers can read it back.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
