//! Two-component PCA projection of representation vectors.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::linalg::symmetric_eigen;

/// Points in the plane of the two leading principal components.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: Vec<[f64; 2]>,
    /// Variance along each component.
    pub variance: [f64; 2],
    /// Set when the sample covariance vanishes; all points are then zero.
    pub degenerate: bool,
}

/// Project `data` onto its top-2 principal components. Component signs are
/// fixed so that the largest-magnitude loading is positive.
pub fn project2d(data: &[&[f64]]) -> Result<Projection> {
    if data.len() < 3 {
        bail!(InvalidArgument, "need at least 3 vectors, got {}", data.len());
    }
    let d = data[0].len();
    if d == 0 || data.iter().any(|v| v.len() != d) {
        bail!(ShapeMismatch, "vectors must share a nonzero length");
    }
    let n = data.len() as f64;
    let mut mean = vec![0.0; d];
    for v in data {
        for (m, x) in mean.iter_mut().zip(*v) {
            *m += x / n;
        }
    }
    let centred: Vec<Vec<f64>> = data.iter().map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let mut cov = vec![0.0; d * d];
    for v in &centred {
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += v[i] * v[j] / (n - 1.0);
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[i * d + j] = cov[j * d + i];
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let scale = mean.iter().map(|m| m * m).sum::<f64>() / d as f64 + 1.0;
    if trace <= 1e-24 * scale {
        return Ok(Projection { points: vec![[0.0; 2]; data.len()], variance: [0.0; 2], degenerate: true });
    }
    let (vals, vecs) = symmetric_eigen(&cov, d)?;
    let mut axes = [vec![0.0; d], vec![0.0; d]];
    for (k, axis) in axes.iter_mut().enumerate().take(d.min(2)) {
        for (i, a) in axis.iter_mut().enumerate() {
            *a = vecs[i * d + k];
        }
        let lead = axis.iter().cloned().fold(0.0, |b: f64, x| if x.abs() > b.abs() { x } else { b });
        if lead < 0.0 {
            axis.iter_mut().for_each(|a| *a = -*a);
        }
    }
    let points = centred
        .iter()
        .map(|v| [0, 1].map(|k| v.iter().zip(&axes[k]).map(|(x, a)| x * a).sum::<f64>()))
        .collect();
    let variance = [0, 1].map(|k| if k < d { vals[k].max(0.0) } else { 0.0 });
    Ok(Projection { points, variance, degenerate: false })
}

/// Mean pairwise distance between points sharing a label, divided by the
/// mean distance between points with different labels.
pub fn cluster_ratio(points: &[[f64; 2]], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() {
        bail!(ShapeMismatch, "{} points, {} labels", points.len(), labels.len());
    }
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let dist = ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt();
            if labels[i] == labels[j] {
                intra += dist;
                n_intra += 1;
            } else {
                inter += dist;
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 || n_inter == 0 {
        bail!(InvalidArgument, "need both repeated and distinct labels");
    }
    let inter = inter / n_inter as f64;
    if inter == 0.0 {
        bail!(InvalidArgument, "all points coincide");
    }
    Ok(intra / n_intra as f64 / inter)
}
