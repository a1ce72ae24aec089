//! Reverse-mode autodiff over [`Mat`] values.
//!
//! A [`Tape`] records every operation as a node; [`Tape::backward`] walks the
//! nodes in reverse and accumulates gradients. Inputs and parameters are leaf
//! nodes. Graphs are rebuilt for every forward pass.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;


use super::mat::Mat;
use crate::error::{bail, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    BroadcastRows(Var),
    Scale(Var, f64),
    Gelu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows(Var, f64),
    L2NormalizeRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    SumCols(Var),
    Sum(Var),
    Reshape(Var),
    Im2Col(Var, usize),
    PoolRows2(Var),
    RepeatRows2(Var),
    PickCols(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

fn softmax_row(x: &[f64], out: &mut [f64]) {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

fn same_shape(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        bail!(ShapeMismatch, "{}: {:?} vs {:?}", what, a.shape(), b.shape());
    }
    Ok(())
}

/// Recorded computation graph.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

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

    fn push(&mut self, value: Mat, op: Op) -> Var {
        let needs_grad = self.inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::MatMulT(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddRow(a, b) | Op::MulRow(a, b) => vec![*a, *b],
            Op::ConcatCols(p) | Op::ConcatRows(p) => p.clone(),
            Op::Transpose(a)
            | Op::BroadcastRows(a)
            | Op::Scale(a, _)
            | Op::Gelu(a)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::LayerNormRows(a, _)
            | Op::L2NormalizeRows(a)
            | Op::SliceCols(a, _)
            | Op::SliceRows(a, _)
            | Op::MeanRows(a)
            | Op::SumCols(a)
            | Op::Sum(a)
            | Op::Reshape(a)
            | Op::Im2Col(a, _)
            | Op::PoolRows2(a)
            | Op::RepeatRows2(a)
            | Op::PickCols(a, _) => vec![*a],
        }
    }

    /// Trainable leaf: gradients flow into it.
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).as_slice()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, what)?;
        let data = x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| f(*p, *q)).collect();
        let v = Mat::from_vec(x.rows(), x.cols(), data)?;
        Ok(self.push(v, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    fn row_op(&mut self, a: Var, row: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            bail!(ShapeMismatch, "row broadcast of {:?} onto {:?}", r.shape(), x.shape());
        }
        let rv = r.as_slice();
        let v = Mat::from_fn(x.rows(), x.cols(), |i, j| f(x[(i, j)], rv[j]));
        Ok(self.push(v, op))
    }

    /// `a + row` with `row` (`1 x cols`) broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_op(a, row, |p, q| p + q, Op::AddRow(a, row))
    }

    /// `a ∘ row` with `row` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_op(a, row, |p, q| p * q, Op::MulRow(a, row))
    }

    /// Repeat a `1 x c` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != 1 {
            bail!(ShapeMismatch, "broadcast_rows needs one row, got {}", x.rows());
        }
        let v = Mat::from_fn(n, x.cols(), |_, j| x[(0, j)]);
        Ok(self.push(v, Op::BroadcastRows(a)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            softmax_row(x.row(r), v.row_mut(r));
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
            for (o, z) in v.row_mut(r).iter_mut().zip(row) {
                *o = z - lse;
            }
        }
        self.push(v, Op::LogSoftmaxRows(a))
    }

    /// Per-row standardisation `(x - mean) / sqrt(var + eps)`, no affine part.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let n = x.cols() as f64;
        let mut v = Mat::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, z) in v.row_mut(r).iter_mut().zip(row) {
                *o = (z - mean) * inv;
            }
        }
        self.push(v, Op::LayerNormRows(a, eps))
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut v = Mat::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let n = x.row(r).iter().map(|z| z * z).sum::<f64>().sqrt();
            if n == 0.0 {
                bail!(Degenerate, "zero-norm row {} in l2 normalisation", r);
            }
            for (o, z) in v.row_mut(r).iter_mut().zip(x.row(r)) {
                *o = z / n;
            }
        }
        Ok(self.push(v, Op::L2NormalizeRows(a)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(Error::OutOfRange { index: start + len, len: x.cols() });
        }
        let v = Mat::from_fn(x.rows(), len, |r, c| x[(r, start + c)]);
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(p) => self.value(*p).rows(),
            None => bail!(InvalidArgument, "concat of nothing"),
        };
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            bail!(ShapeMismatch, "concat_cols with differing row counts");
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let x = self.value(*p);
                v.row_mut(r)[off..off + x.cols()].copy_from_slice(x.row(r));
                off += x.cols();
            }
        }
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.rows() {
            return Err(Error::OutOfRange { index: start + len, len: x.rows() });
        }
        let v = Mat::from_vec(len, x.cols(), x.as_slice()[start * x.cols()..(start + len) * x.cols()].to_vec())?;
        Ok(self.push(v, Op::SliceRows(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(p) => self.value(*p).cols(),
            None => bail!(InvalidArgument, "concat of nothing"),
        };
        let mut data = Vec::new();
        for p in parts {
            let x = self.value(*p);
            if x.cols() != cols {
                bail!(ShapeMismatch, "concat_rows with differing column counts");
            }
            data.extend_from_slice(x.as_slice());
        }
        let v = Mat::from_vec(data.len() / cols.max(1), cols, data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    /// Mean over rows, `1 x cols`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x.col_sums().scale(1.0 / x.rows() as f64);
        self.push(v, Op::MeanRows(a))
    }

    /// Sum over columns, `rows x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Mat::from_fn(x.rows(), 1, |r, _| x.row(r).iter().sum());
        self.push(v, Op::SumCols(a))
    }

    /// Sum of all entries, `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::filled(1, 1, self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(a).clone().reshaped(rows, cols)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Rows are positions, columns channels. Output row `i` holds the
    /// `k` neighbouring rows `i - k/2 ..= i + k/2` side by side, zero padded.
    pub fn im2col(&mut self, a: Var, k: usize) -> Result<Var> {
        if k % 2 == 0 {
            bail!(InvalidArgument, "im2col kernel must be odd, got {}", k);
        }
        let x = self.value(a);
        let (l, c) = x.shape();
        let half = (k / 2) as isize;
        let mut v = Mat::zeros(l, k * c);
        for i in 0..l {
            for j in 0..k {
                let src = i as isize + j as isize - half;
                if src >= 0 && (src as usize) < l {
                    v.row_mut(i)[j * c..(j + 1) * c].copy_from_slice(x.row(src as usize));
                }
            }
        }
        Ok(self.push(v, Op::Im2Col(a, k)))
    }

    /// Average adjacent row pairs.
    pub fn pool_rows2(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() % 2 != 0 {
            bail!(ShapeMismatch, "pooling {} rows", x.rows());
        }
        let v = Mat::from_fn(x.rows() / 2, x.cols(), |r, c| 0.5 * (x[(2 * r, c)] + x[(2 * r + 1, c)]));
        Ok(self.push(v, Op::PoolRows2(a)))
    }

    /// Duplicate every row.
    pub fn repeat_rows2(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Mat::from_fn(2 * x.rows(), x.cols(), |r, c| x[(r / 2, c)]);
        self.push(v, Op::RepeatRows2(a))
    }

    /// `out[r] = a[r, idx[r]]`, `rows x 1`.
    pub fn pick_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if idx.len() != x.rows() {
            bail!(ShapeMismatch, "{} picks for {} rows", idx.len(), x.rows());
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.cols()) {
            return Err(Error::OutOfRange { index: bad, len: x.cols() });
        }
        let v = Mat::from_fn(x.rows(), 1, |r, _| x[(r, idx[r])]);
        Ok(self.push(v, Op::PickCols(a, idx.to_vec())))
    }

    /// Sum of squared entries.
    pub fn sum_sqr(&mut self, a: Var) -> Result<Var> {
        let sq = self.mul(a, a)?;
        Ok(self.sum(sq))
    }

    /// Gradients of the `1 x 1` node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            bail!(ShapeMismatch, "backward from a {:?} node", self.value(loss).shape());
        }
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        let needs = |v: &Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, d: Mat| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(x) => x.add_assign(&d),
                slot => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(a) {
                    acc(*a, g.matmul_t(val(b))?);
                }
                if needs(b) {
                    acc(*b, val(a).t_matmul(g)?);
                }
            }
            Op::MatMulT(a, b) => {
                if needs(a) {
                    acc(*a, g.matmul(val(b))?);
                }
                if needs(b) {
                    acc(*b, g.t_matmul(val(a))?);
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (x, z) = (val(a), val(b));
                let da = Mat::from_vec(g.rows(), g.cols(), g.as_slice().iter().zip(z.as_slice()).map(|(p, q)| p * q).collect())?;
                let db = Mat::from_vec(g.rows(), g.cols(), g.as_slice().iter().zip(x.as_slice()).map(|(p, q)| p * q).collect())?;
                acc(*a, da);
                acc(*b, db);
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, g.col_sums());
            }
            Op::MulRow(a, row) => {
                let (x, r) = (val(a), val(row));
                let rv = r.as_slice();
                acc(*a, Mat::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * rv[j]));
                acc(*row, Mat::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * x[(i, j)]).col_sums());
            }
            Op::BroadcastRows(a) => acc(*a, g.col_sums()),
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::Gelu(a) => {
                let x = val(a);
                acc(*a, Mat::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * gelu_grad(x[(i, j)])));
            }
            Op::SoftmaxRows(a) => {
                let mut d = Mat::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum();
                    for ((o, gy), yy) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yy * (gy - dot);
                    }
                }
                acc(*a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let mut d = Mat::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let s: f64 = g.row(r).iter().sum();
                    for ((o, gy), yy) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = gy - yy.exp() * s;
                    }
                }
                acc(*a, d);
            }
            Op::LayerNormRows(a, eps) => {
                let x = val(a);
                let n = x.cols() as f64;
                let mut d = Mat::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let row = x.row(r);
                    let mean = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let gm = g.row(r).iter().sum::<f64>() / n;
                    let gx = g.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum::<f64>() / n;
                    for ((o, gy), yy) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = inv * (gy - gm - yy * gx);
                    }
                }
                acc(*a, d);
            }
            Op::L2NormalizeRows(a) => {
                let x = val(a);
                let mut d = Mat::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let n = x.row(r).iter().map(|z| z * z).sum::<f64>().sqrt();
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum();
                    for ((o, gy), yy) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = (gy - yy * dot) / n;
                    }
                }
                acc(*a, d);
            }
            Op::SliceCols(a, start) => {
                let x = val(a);
                let mut d = Mat::zeros(x.rows(), x.cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let c = val(p).cols();
                    acc(*p, Mat::from_fn(g.rows(), c, |r, j| g[(r, off + j)]));
                    off += c;
                }
            }
            Op::SliceRows(a, start) => {
                let x = val(a);
                let mut d = Mat::zeros(x.rows(), x.cols());
                let c = x.cols();
                d.as_mut_slice()[start * c..(start + g.rows()) * c].copy_from_slice(g.as_slice());
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let (r, c) = val(p).shape();
                    acc(*p, Mat::from_vec(r, c, g.as_slice()[off * c..(off + r) * c].to_vec())?);
                    off += r;
                }
            }
            Op::MeanRows(a) => {
                let x = val(a);
                let s = 1.0 / x.rows() as f64;
                acc(*a, Mat::from_fn(x.rows(), x.cols(), |_, j| g[(0, j)] * s));
            }
            Op::SumCols(a) => {
                let x = val(a);
                acc(*a, Mat::from_fn(x.rows(), x.cols(), |r, _| g[(r, 0)]));
            }
            Op::Sum(a) => {
                let x = val(a);
                acc(*a, Mat::filled(x.rows(), x.cols(), g[(0, 0)]));
            }
            Op::Reshape(a) => {
                let (r, c) = val(a).shape();
                acc(*a, g.clone().reshaped(r, c)?);
            }
            Op::Im2Col(a, k) => {
                let (l, c) = val(a).shape();
                let half = (*k / 2) as isize;
                let mut d = Mat::zeros(l, c);
                for i in 0..l {
                    for j in 0..*k {
                        let src = i as isize + j as isize - half;
                        if src >= 0 && (src as usize) < l {
                            let gr = &g.row(i)[j * c..(j + 1) * c];
                            for (o, v) in d.row_mut(src as usize).iter_mut().zip(gr) {
                                *o += v;
                            }
                        }
                    }
                }
                acc(*a, d);
            }
            Op::PoolRows2(a) => {
                let (l, c) = val(a).shape();
                acc(*a, Mat::from_fn(l, c, |r, j| 0.5 * g[(r / 2, j)]));
            }
            Op::RepeatRows2(a) => {
                let (l, c) = val(a).shape();
                acc(*a, Mat::from_fn(l, c, |r, j| g[(2 * r, j)] + g[(2 * r + 1, j)]));
            }
            Op::PickCols(a, idx) => {
                let (r, c) = val(a).shape();
                let mut d = Mat::zeros(r, c);
                for (row, &j) in idx.iter().enumerate() {
                    d[(row, j)] = g[(row, 0)];
                }
                acc(*a, d);
            }
        }
        Ok(())
    }
}
