use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddConst(Var, f64),
    AddRowBroadcast(Var, Var),
    Transpose(Var),
    Tanh(Var),
    Gelu(Var),
    Relu(Var),
    Sqrt(Var),
    /// Row-wise softmax over entries where `mask > 0`; denied entries are
    /// exactly zero in the output.
    RowSoftmaxMasked(Var, Matrix),
    /// Per-row normalization followed by a broadcast affine (gamma, beta).
    LayerNorm(Var, Var, Var),
    MeanAll(Var),
    SumAll(Var),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    /// Mean negative log-likelihood of the labels under row-wise softmax.
    SoftmaxCrossEntropy(Var, Vec<usize>),
    /// Minimum over 1x1 scalars; the gradient routes to the first argmin.
    MinScalars(Vec<Var>),
    /// Elementwise multiplication by a constant mask (dropout).
    MulConstMask(Var, Matrix),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

const LAYER_NORM_EPS: f64 = 1e-9;

/// Reverse-mode tape. Operations execute eagerly and record enough to
/// replay the chain rule backwards.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddRowBroadcast(a, b) => self.requires(*a) || self.requires(*b),
            Op::LayerNorm(a, g, b) => self.requires(*a) || self.requires(*g) || self.requires(*b),
            Op::Scale(a, _)
            | Op::AddConst(a, _)
            | Op::Transpose(a)
            | Op::Tanh(a)
            | Op::Gelu(a)
            | Op::Relu(a)
            | Op::Sqrt(a)
            | Op::RowSoftmaxMasked(a, _)
            | Op::MeanAll(a)
            | Op::SumAll(a)
            | Op::SliceCols(a, _, _)
            | Op::GatherRows(a, _)
            | Op::SoftmaxCrossEntropy(a, _)
            | Op::MulConstMask(a, _) => self.requires(*a),
            Op::ConcatRows(vs) | Op::MinScalars(vs) => vs.iter().any(|v| self.requires(*v)),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; gradients do not flow into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, value: Matrix) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(value, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value / &self.nodes[b.0].value;
        self.push(value, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = &self.nodes[a.0].value * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = &self.nodes[a.0].value + c;
        self.push(value, Op::AddConst(a, c))
    }

    /// `a` is (m, n), `row` is (1, n); adds `row` to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: Var, row: Var) -> Var {
        let r = self.nodes[row.0].value.row(0).to_owned();
        let value = &self.nodes[a.0].value + &r;
        self.push(value, Op::AddRowBroadcast(a, row))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.t().as_standard_layout().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(gelu);
        self.push(value, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::sqrt);
        self.push(value, Op::Sqrt(a))
    }

    /// Softmax per row over entries with `mask > 0`. Denied entries are 0 in
    /// the output, so they contribute exactly nothing downstream.
    pub fn row_softmax_masked(&mut self, a: Var, mask: &Matrix) -> Var {
        let x = &self.nodes[a.0].value;
        assert_eq!(x.dim(), mask.dim(), "softmax mask shape");
        let (m, n) = x.dim();
        let mut out = Array2::zeros((m, n));
        for i in 0..m {
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if mask[[i, j]] > 0.0 && x[[i, j]] > max {
                    max = x[[i, j]];
                }
            }
            if max == f64::NEG_INFINITY {
                continue; // fully masked row stays zero
            }
            let mut denom = 0.0;
            for j in 0..n {
                if mask[[i, j]] > 0.0 {
                    let e = (x[[i, j]] - max).exp();
                    out[[i, j]] = e;
                    denom += e;
                }
            }
            for j in 0..n {
                if mask[[i, j]] > 0.0 {
                    out[[i, j]] /= denom;
                }
            }
        }
        self.push(out, Op::RowSoftmaxMasked(a, mask.clone()))
    }

    /// Per-row layer normalization with affine (gamma, beta both 1 x n).
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let g = self.nodes[gamma.0].value.row(0).to_owned();
        let b = self.nodes[beta.0].value.row(0).to_owned();
        let n = x.ncols() as f64;
        let mut out = x.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * g[j] + b[j];
            }
        }
        self.push(out, Op::LayerNorm(a, gamma, beta))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let value = Array2::from_elem((1, 1), x.sum() / x.len() as f64);
        self.push(value, Op::MeanAll(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.nodes[a.0].value.sum());
        self.push(value, Op::SumAll(a))
    }

    pub fn slice_cols(&mut self, a: Var, from: usize, to: usize) -> Var {
        let value = self.nodes[a.0]
            .value
            .slice(ndarray::s![.., from..to])
            .to_owned();
        self.push(value, Op::SliceCols(a, from, to))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows shapes");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let transposed: Vec<Var> = parts.iter().map(|v| self.transpose(*v)).collect();
        let cat = self.concat_rows(&transposed);
        self.transpose(cat)
    }

    /// Embedding lookup: rows of `table` selected by `indices`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let t = &self.nodes[table.0].value;
        let mut value = Array2::zeros((indices.len(), t.ncols()));
        for (r, &i) in indices.iter().enumerate() {
            value.row_mut(r).assign(&t.row(i));
        }
        self.push(value, Op::GatherRows(table, indices.to_vec()))
    }

    /// Mean NLL of `labels` under a row-wise softmax over `logits`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let x = &self.nodes[logits.0].value;
        assert_eq!(x.nrows(), labels.len(), "one label per logits row");
        let mut loss = 0.0;
        for (row, &lab) in x.axis_iter(Axis(0)).zip(labels.iter()) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            loss += lse - row[lab];
        }
        let value = Array2::from_elem((1, 1), loss / labels.len() as f64);
        self.push(value, Op::SoftmaxCrossEntropy(logits, labels.to_vec()))
    }

    /// Minimum over 1x1 scalars.
    pub fn min_scalars(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let min = parts
            .iter()
            .map(|v| self.scalar(*v))
            .fold(f64::INFINITY, f64::min);
        self.push(Array2::from_elem((1, 1), min), Op::MinScalars(parts.to_vec()))
    }

    /// Elementwise product with a constant mask (no gradient through the mask).
    pub fn mul_const_mask(&mut self, a: Var, mask: &Matrix) -> Var {
        let value = &self.nodes[a.0].value * mask;
        self.push(value, Op::MulConstMask(a, mask.clone()))
    }

    /// Squared L2 distance between two same-shape values, as a 1x1 scalar.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.sum_all(sq)
    }

    /// Euclidean distance; subgradient 0 at coincident points.
    pub fn l2_distance(&mut self, a: Var, b: Var) -> Var {
        let sq = self.squared_distance(a, b);
        self.sqrt(sq)
    }

    /// Cosine similarity between two row vectors (1 x d), as 1x1.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Var {
        let bt = self.transpose(b);
        let dot = self.matmul(a, bt);
        let aa = self.mul(a, a);
        let na2 = self.sum_all(aa);
        let na = self.sqrt(na2);
        let bb = self.mul(b, b);
        let nb2 = self.sum_all(bb);
        let nb = self.sqrt(nb2);
        let denom = self.mul(na, nb);
        let denom = self.add_const(denom, 1e-30);
        self.div(dot, denom)
    }

    /// Mean over rows, returned as a single row (1 x n).
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let rows = self.nodes[a.0].value.nrows();
        let pool = Array2::from_elem((1, rows), 1.0 / rows as f64);
        let w = self.constant(pool);
        self.matmul(w, a)
    }

    /// Reverse pass from a 1x1 scalar; returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.nodes[loss.0].value.len(),
            1,
            "backward expects a scalar loss"
        );
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let add_to = |grads: &mut [Option<Matrix>], v: Var, delta: Matrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                if self.requires(*a) {
                    add_to(grads, *a, g.dot(&bv.t()));
                }
                if self.requires(*b) {
                    add_to(grads, *b, av.t().dot(g));
                }
            }
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, -g.clone());
            }
            Op::Mul(a, b) => {
                if self.requires(*a) {
                    add_to(grads, *a, g * &self.nodes[b.0].value);
                }
                if self.requires(*b) {
                    add_to(grads, *b, g * &self.nodes[a.0].value);
                }
            }
            Op::Div(a, b) => {
                let bv = &self.nodes[b.0].value;
                if self.requires(*a) {
                    add_to(grads, *a, g / bv);
                }
                if self.requires(*b) {
                    let av = &self.nodes[a.0].value;
                    add_to(grads, *b, -(g * av) / (bv * bv));
                }
            }
            Op::Scale(a, c) => add_to(grads, *a, g * *c),
            Op::AddConst(a, _) => add_to(grads, *a, g.clone()),
            Op::AddRowBroadcast(a, row) => {
                add_to(grads, *a, g.clone());
                if self.requires(*row) {
                    let summed = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_to(grads, *row, summed);
                }
            }
            Op::Transpose(a) => add_to(grads, *a, g.t().as_standard_layout().to_owned()),
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                add_to(grads, *a, g * &y.mapv(|t| 1.0 - t * t));
            }
            Op::Gelu(a) => {
                let x = &self.nodes[a.0].value;
                add_to(grads, *a, g * &x.mapv(gelu_derivative));
            }
            Op::Relu(a) => {
                let x = &self.nodes[a.0].value;
                add_to(grads, *a, g * &x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
            }
            Op::Sqrt(a) => {
                let y = &self.nodes[i].value;
                let d = y.mapv(|v| if v > 0.0 { 0.5 / v } else { 0.0 });
                add_to(grads, *a, g * &d);
            }
            Op::RowSoftmaxMasked(a, _mask) => {
                let y = &self.nodes[i].value;
                let (m, n) = y.dim();
                let mut da = Array2::zeros((m, n));
                for r in 0..m {
                    let mut dot = 0.0;
                    for c in 0..n {
                        dot += g[[r, c]] * y[[r, c]];
                    }
                    for c in 0..n {
                        da[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                    }
                }
                add_to(grads, *a, da);
            }
            Op::LayerNorm(a, gamma, beta) => {
                let x = &self.nodes[a.0].value;
                let gv = self.nodes[gamma.0].value.row(0).to_owned();
                let (m, n) = x.dim();
                let nf = n as f64;
                let mut xhat = Array2::zeros((m, n));
                let mut inv_std = vec![0.0; m];
                for r in 0..m {
                    let row = x.row(r);
                    let mean = row.sum() / nf;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    inv_std[r] = inv;
                    for c in 0..n {
                        xhat[[r, c]] = (x[[r, c]] - mean) * inv;
                    }
                }
                if self.requires(*gamma) {
                    let dg = (g * &xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_to(grads, *gamma, dg);
                }
                if self.requires(*beta) {
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_to(grads, *beta, db);
                }
                if self.requires(*a) {
                    let mut da = Array2::zeros((m, n));
                    for r in 0..m {
                        let mut mean_gh = 0.0;
                        let mut mean_gh_xhat = 0.0;
                        for c in 0..n {
                            let gh = g[[r, c]] * gv[c];
                            mean_gh += gh;
                            mean_gh_xhat += gh * xhat[[r, c]];
                        }
                        mean_gh /= nf;
                        mean_gh_xhat /= nf;
                        for c in 0..n {
                            let gh = g[[r, c]] * gv[c];
                            da[[r, c]] =
                                inv_std[r] * (gh - mean_gh - xhat[[r, c]] * mean_gh_xhat);
                        }
                    }
                    add_to(grads, *a, da);
                }
            }
            Op::MeanAll(a) => {
                let shape = self.nodes[a.0].value.dim();
                let v = g[[0, 0]] / (shape.0 * shape.1) as f64;
                add_to(grads, *a, Array2::from_elem(shape, v));
            }
            Op::SumAll(a) => {
                let shape = self.nodes[a.0].value.dim();
                add_to(grads, *a, Array2::from_elem(shape, g[[0, 0]]));
            }
            Op::SliceCols(a, from, _to) => {
                let shape = self.nodes[a.0].value.dim();
                let mut da = Array2::zeros(shape);
                da.slice_mut(ndarray::s![.., *from..*from + g.ncols()])
                    .assign(g);
                add_to(grads, *a, da);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let rows = self.nodes[p.0].value.nrows();
                    if self.requires(*p) {
                        let dp = g.slice(ndarray::s![offset..offset + rows, ..]).to_owned();
                        add_to(grads, *p, dp);
                    }
                    offset += rows;
                }
            }
            Op::GatherRows(table, indices) => {
                if self.requires(*table) {
                    let shape = self.nodes[table.0].value.dim();
                    let mut dt = Array2::zeros(shape);
                    for (r, &idx) in indices.iter().enumerate() {
                        let mut row = dt.row_mut(idx);
                        row += &g.row(r);
                    }
                    add_to(grads, *table, dt);
                }
            }
            Op::SoftmaxCrossEntropy(logits, labels) => {
                let x = &self.nodes[logits.0].value;
                let (m, n) = x.dim();
                let scale = g[[0, 0]] / m as f64;
                let mut dl = Array2::zeros((m, n));
                for r in 0..m {
                    let row = x.row(r);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let denom = row.iter().map(|v| (v - max).exp()).sum::<f64>();
                    for c in 0..n {
                        let p = (x[[r, c]] - max).exp() / denom;
                        let onehot = if labels[r] == c { 1.0 } else { 0.0 };
                        dl[[r, c]] = scale * (p - onehot);
                    }
                }
                add_to(grads, *logits, dl);
            }
            Op::MinScalars(parts) => {
                let min = self.nodes[i].value[[0, 0]];
                for p in parts {
                    if self.scalar(*p) == min {
                        add_to(grads, *p, g.clone());
                        break;
                    }
                }
            }
            Op::MulConstMask(a, mask) => {
                add_to(grads, *a, g * mask);
            }
        }
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Gradients resulting from [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

/// Named parameter storage shared across training steps.
///
/// Initialization is derived from `(seed, name)` so that tensors with the
/// same name initialize identically across model variants regardless of
/// creation order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Matrix>,
    seed: u64,
}

fn mix_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, folded into the master seed via splitmix.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            params: BTreeMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fan-in scaled uniform init: U(-sqrt(1/fan_in), sqrt(1/fan_in)).
    pub fn get_or_init(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize) -> &Matrix {
        let seed = self.seed;
        self.params.entry(name.to_string()).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, name));
            let limit = (1.0 / fan_in.max(1) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
        })
    }

    pub fn get_or_init_const(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> &Matrix {
        self.params
            .entry(name.to_string())
            .or_insert_with(|| Array2::from_elem((rows, cols), v))
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name)
    }

    pub fn insert(&mut self, name: &str, value: Matrix) {
        self.params.insert(name.to_string(), value);
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// A tape plus the parameter store feeding it; interns each named parameter
/// once per graph so gradients can be collected back by name.
pub struct GraphCtx<'a> {
    pub tape: Tape,
    store: &'a mut ParamStore,
    interned: HashMap<String, Var>,
    frozen: bool,
}

impl<'a> GraphCtx<'a> {
    pub fn new(store: &'a mut ParamStore) -> Self {
        GraphCtx {
            tape: Tape::new(),
            store,
            interned: HashMap::new(),
            frozen: false,
        }
    }

    /// Evaluation-mode graph: parameters enter as constants, so no gradient
    /// bookkeeping happens during forward passes.
    pub fn new_frozen(store: &'a mut ParamStore) -> Self {
        GraphCtx {
            tape: Tape::new(),
            store,
            interned: HashMap::new(),
            frozen: true,
        }
    }

    pub fn param(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize) -> Var {
        if let Some(v) = self.interned.get(name) {
            return *v;
        }
        let value = self
            .store
            .get_or_init(name, rows, cols, fan_in)
            .clone();
        let v = if self.frozen {
            self.tape.constant(value)
        } else {
            self.tape.param(value)
        };
        self.interned.insert(name.to_string(), v);
        v
    }

    pub fn param_const(&mut self, name: &str, rows: usize, cols: usize, init: f64) -> Var {
        if let Some(v) = self.interned.get(name) {
            return *v;
        }
        let value = self.store.get_or_init_const(name, rows, cols, init).clone();
        let v = if self.frozen {
            self.tape.constant(value)
        } else {
            self.tape.param(value)
        };
        self.interned.insert(name.to_string(), v);
        v
    }

    /// Gradients for every interned parameter, keyed by name. Parameters not
    /// reached by the loss get zero gradients.
    pub fn named_grads(&self, grads: &Gradients) -> BTreeMap<String, Matrix> {
        let mut out = BTreeMap::new();
        for (name, var) in &self.interned {
            let g = grads
                .get(*var)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(self.tape.value(*var).dim()));
            out.insert(name.clone(), g);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_values_and_grads() {
        let mut tape = Tape::new();
        let a = tape.param(ndarray::array![[1.0, 2.0], [3.0, 4.0]]);
        let b = tape.param(ndarray::array![[5.0], [6.0]]);
        let c = tape.matmul(a, b);
        assert_eq!(tape.value(c), &ndarray::array![[17.0], [39.0]]);
        let loss = tape.sum_all(c);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(a).unwrap(), &ndarray::array![[5.0, 6.0], [5.0, 6.0]]);
        assert_eq!(grads.get(b).unwrap(), &ndarray::array![[4.0], [6.0]]);
    }

    #[test]
    fn masked_softmax_rows_sum_to_one_over_allowed() {
        let mut tape = Tape::new();
        let x = tape.constant(ndarray::array![[1.0, 2.0, 3.0], [0.5, -1.0, 0.0]]);
        let mask = ndarray::array![[1.0, 0.0, 1.0], [1.0, 1.0, 1.0]];
        let y = tape.row_softmax_masked(x, &mask);
        let v = tape.value(y);
        assert_eq!(v[[0, 1]], 0.0);
        assert!((v.row(0).sum() - 1.0).abs() < 1e-12);
        assert!((v.row(1).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_is_normalized_before_affine() {
        let mut tape = Tape::new();
        let x = tape.constant(ndarray::array![[1.0, 2.0, 3.0, 10.0]]);
        let g = tape.constant(Matrix::from_elem((1, 4), 1.0));
        let b = tape.constant(Matrix::zeros((1, 4)));
        let y = tape.layer_norm(x, g, b);
        let v = tape.value(y);
        let mean = v.sum() / 4.0;
        let var = v.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn param_init_is_order_independent() {
        let mut s1 = ParamStore::new(7);
        s1.get_or_init("a", 2, 3, 2);
        s1.get_or_init("b", 2, 3, 2);
        let mut s2 = ParamStore::new(7);
        s2.get_or_init("b", 2, 3, 2);
        s2.get_or_init("a", 2, 3, 2);
        assert_eq!(s1.get("a"), s2.get("a"));
        assert_eq!(s1.get("b"), s2.get("b"));
    }

    #[test]
    fn min_scalars_routes_to_first_argmin() {
        let mut tape = Tape::new();
        let a = tape.param(Matrix::from_elem((1, 1), 2.0));
        let b = tape.param(Matrix::from_elem((1, 1), 1.0));
        let c = tape.param(Matrix::from_elem((1, 1), 1.0));
        let m = tape.min_scalars(&[a, b, c]);
        assert_eq!(tape.scalar(m), 1.0);
        let grads = tape.backward(m);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap()[[0, 0]], 1.0);
        assert!(grads.get(c).is_none());
    }
}
