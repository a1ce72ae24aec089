//! Central-difference gradient checks.

use alloc::vec::Vec;

use rand::Rng;

use super::mat::Mat;
use super::params::ParamStore;
use crate::error::{bail, Result};

/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error between the analytic gradient returned by `f` at
/// `point` and central differences with step `eps`, over `coords` (all
/// coordinates when empty).
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    point: &[f64],
    eps: f64,
    coords: &[usize],
) -> Result<f64> {
    let (_, grad) = f(point)?;
    if grad.len() != point.len() {
        bail!(ShapeMismatch, "gradient has {} entries for {} coordinates", grad.len(), point.len());
    }
    let all: Vec<usize>;
    let coords = if coords.is_empty() {
        all = (0..point.len()).collect();
        &all[..]
    } else {
        coords
    };
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        let x0 = x[i];
        x[i] = x0 + eps;
        let (fp, _) = f(&x)?;
        x[i] = x0 - eps;
        let (fm, _) = f(&x)?;
        x[i] = x0;
        worst = worst.max(relative_error(grad[i], (fp - fm) / (2.0 * eps)));
    }
    Ok(worst)
}

/// [`grad_check`] over the flattened parameters of a store.
pub fn check_store(
    store: &ParamStore,
    mut loss: impl FnMut(&ParamStore) -> Result<(f64, Vec<Mat>)>,
    eps: f64,
    coords: &[usize],
) -> Result<f64> {
    let mut work = store.clone();
    let point = store.flatten();
    grad_check(
        |x| {
            work.load_flat(x)?;
            let (v, g) = loss(&work)?;
            Ok((v, g.into_iter().flat_map(|m| m.into_vec()).collect()))
        },
        &point,
        eps,
        coords,
    )
}

/// Up to `n` distinct coordinates out of `len`, sorted.
pub fn sample_coords<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    let mut idx = rand::seq::index::sample(rng, len, n).into_vec();
    idx.sort_unstable();
    idx
}

/// Overwrite every parameter with uniform draws in `±scale`, so checks do
/// not sit on zero-initialised layers.
pub fn randomize<R: Rng + ?Sized>(store: &mut ParamStore, scale: f64, rng: &mut R) {
    let flat: Vec<f64> = (0..store.numel()).map(|_| rng.random_range(-scale..scale)).collect();
    // lengths match by construction
    let _ = store.load_flat(&flat);
}
