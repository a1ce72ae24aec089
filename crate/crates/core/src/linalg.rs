//! Dense complex matrices and the decompositions the precoders need.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration. It keeps full
//! relative accuracy on small singular values, which the rank tests rely on,
//! and the matrices involved are at most a few by a few dozen.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};


use crate::error::{bail, Error, Result};
use crate::C64;

/// Row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            bail!(ShapeMismatch, "{} values for a {}x{} matrix", data.len(), rows, cols);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Column vector from a slice.
    pub fn column(v: &[C64]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn col(&self, c: usize) -> Vec<C64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_col(&mut self, c: usize, v: &[C64]) {
        for (r, &x) in v.iter().enumerate() {
            self[(r, c)] = x;
        }
    }

    /// First `n` columns.
    pub fn leading_cols(&self, n: usize) -> Self {
        Self::from_fn(self.rows, n, |r, c| self[(r, c)])
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn matmul(&self, rhs: &CMat) -> Result<CMat> {
        if self.cols != rhs.rows {
            bail!(ShapeMismatch, "{}x{} times {}x{}", self.rows, self.cols, rhs.rows, rhs.cols);
        }
        let mut out = CMat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &CMat) -> Result<CMat> {
        if self.shape() != rhs.shape() {
            bail!(ShapeMismatch, "{:?} plus {:?}", self.shape(), rhs.shape());
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        Ok(CMat { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, s: C64) -> CMat {
        CMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a * s).collect() }
    }

    /// `[self, rhs]`.
    pub fn hstack(&self, rhs: &CMat) -> Result<CMat> {
        if self.rows != rhs.rows {
            bail!(ShapeMismatch, "hstack of {} and {} rows", self.rows, rhs.rows);
        }
        Ok(CMat::from_fn(self.rows, self.cols + rhs.cols, |r, c| {
            if c < self.cols {
                self[(r, c)]
            } else {
                rhs[(r, c - self.cols)]
            }
        }))
    }

    pub fn frobenius_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sqr().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> Result<f64> {
        if self.cols == 1 || self.rows == 1 {
            return Ok(self.frobenius());
        }
        Ok(svd(self)?.singular_values.first().copied().unwrap_or(0.0))
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

/// `a^H b`.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Kronecker product of two vectors, `a ⊗ b`.
pub fn kron(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        for &y in b {
            out.push(x * y);
        }
    }
    out
}

/// Thin SVD `A = U diag(s) V^H` with `r = min(m, n)` columns in `U` and `V`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMat,
    pub singular_values: Vec<f64>,
    pub v: CMat,
}

const MAX_SWEEPS: usize = 80;

/// Hestenes one-sided Jacobi on the columns of `a` (m x n, n <= m).
/// Returns the rotated columns and the accumulated unitary (n x n).
fn orthogonalize_columns(a: &CMat) -> (Vec<Vec<C64>>, Vec<Vec<C64>>) {
    let n = a.cols();
    let mut cols: Vec<Vec<C64>> = (0..n).map(|c| a.col(c)).collect();
    let mut rot: Vec<Vec<C64>> = (0..n)
        .map(|c| (0..n).map(|r| C64::new(if r == c { 1.0 } else { 0.0 }, 0.0)).collect())
        .collect();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha: f64 = cols[p].iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = cols[q].iter().map(|z| z.norm_sqr()).sum();
                let gamma = inner(&cols[p], &cols[q]);
                let g = gamma.norm();
                if g == 0.0 || g <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let pc = phase.conj();
                rotate_pair(&mut cols, p, q, c, s, pc);
                rotate_pair(&mut rot, p, q, c, s, pc);
            }
        }
        if !rotated {
            break;
        }
    }
    (cols, rot)
}

fn rotate_pair(xs: &mut [Vec<C64>], p: usize, q: usize, c: f64, s: f64, phase: C64) {
    let (lo, hi) = xs.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let yq = *y * phase;
        let nx = *x * c - yq * s;
        let ny = *x * s + yq * c;
        *x = nx;
        *y = ny;
    }
}

/// Extend a set of orthonormal vectors in `C^dim` with unit vectors from the
/// standard basis until there are `want` of them.
fn complete_basis(mut basis: Vec<Vec<C64>>, dim: usize, want: usize) -> Vec<Vec<C64>> {
    let mut e = 0;
    while basis.len() < want && e < dim {
        let mut v = vec![C64::new(0.0, 0.0); dim];
        v[e] = C64::new(1.0, 0.0);
        e += 1;
        for _ in 0..2 {
            for b in &basis {
                let proj = inner(b, &v);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= proj * y;
                }
            }
        }
        let nv = norm(&v);
        if nv > 1e-8 {
            basis.push(v.into_iter().map(|x| x / nv).collect());
        }
    }
    basis
}

/// Thin singular value decomposition, singular values sorted descending.
pub fn svd(a: &CMat) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    let (m, n) = a.shape();
    let r = m.min(n);
    if r == 0 {
        bail!(InvalidArgument, "svd of an empty {}x{} matrix", m, n);
    }
    // Work on whichever of A / A^H has the fewer columns.
    let tall = n <= m;
    let work = if tall { a.clone() } else { a.adjoint() };
    let (cols, rot) = orthogonalize_columns(&work);
    let mut order: Vec<usize> = (0..r).collect();
    let norms: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(core::cmp::Ordering::Equal).then(i.cmp(&j)));

    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let tiny = if scale > 0.0 { scale * 1e-300_f64.max(f64::EPSILON * 1e-3) } else { 0.0 };
    let mut singular_values = Vec::with_capacity(r);
    let mut left: Vec<Vec<C64>> = Vec::with_capacity(r);
    let mut right: Vec<Vec<C64>> = Vec::with_capacity(r);
    let mut deficient = false;
    for &i in &order {
        let s = norms[i];
        singular_values.push(s);
        if !deficient && s > tiny && s > 0.0 {
            left.push(cols[i].iter().map(|x| x / s).collect());
            right.push(rot[i].clone());
        } else {
            deficient = true;
        }
    }
    // For the tall case `work` columns live in C^m (left vectors) and the
    // rotation in C^n (right vectors); the wide case swaps roles.
    let (mut uvec, mut vvec) = if tall { (left, right) } else { (right, left) };
    if deficient {
        let kept = uvec.len();
        uvec = complete_basis(uvec, m, r);
        // Right vectors paired with zero singular values are free; rebuild
        // them from the rotation so they stay orthonormal to the kept ones.
        let mut extra: Vec<Vec<C64>> = Vec::new();
        if tall {
            for &i in order.iter().skip(kept) {
                extra.push(rot[i].clone());
            }
            vvec.extend(extra);
        } else {
            vvec = complete_basis(vvec, n, r);
        }
    }
    let u = CMat::from_fn(m, r, |row, c| uvec[c][row]);
    let v = CMat::from_fn(n, r, |row, c| vvec[c][row]);
    Ok(Svd { u, singular_values, v })
}

/// Eigen-decomposition of a real symmetric matrix (row-major, `n x n`) by
/// cyclic Jacobi. Eigenvalues descending, eigenvectors as columns.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        bail!(ShapeMismatch, "{} values for a {}x{} matrix", a.len(), n, n);
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("symmetric_eigen input"));
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| m[i * n + i] * m[i * n + i]).sum();
        if off <= 1e-30 * diag.max(1e-300) || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[j * n + j].partial_cmp(&m[i * n + i]).unwrap_or(core::cmp::Ordering::Equal).then(i.cmp(&j))
    });
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (c, &i) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + c] = v[r * n + i];
        }
    }
    Ok((values, vectors))
}
