#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;


use super::mat::Mat;
use super::params::ParamStore;
use crate::error::{bail, Error, Result};

/// Linear warmup to `peak`, then cosine decay to `peak * final_frac`.
/// `final_frac = 1` keeps the rate constant after warmup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub final_frac: f64,
}

impl LrSchedule {
    /// Warmup over 5% of `total_steps`.
    pub fn with_warmup(peak: f64, total_steps: usize, final_frac: f64) -> Self {
        let warmup_steps = (total_steps / 20).max(1);
        Self { peak, warmup_steps, total_steps, final_frac }
    }

    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let frac = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        let cos = 0.5 * (1.0 + (core::f64::consts::PI * frac).cos());
        self.peak * (self.final_frac + (1.0 - self.final_frac) * cos)
    }
}

/// Adam with optional global-norm gradient clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Mat> = store.iter().map(|(_, m)| Mat::zeros(m.rows(), m.cols())).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(1.0), m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Mat], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || store.len() != self.m.len() {
            bail!(ShapeMismatch, "{} gradients for {} parameters", grads.len(), self.m.len());
        }
        let norm = grads.iter().map(|g| g.sum_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let clip = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = grads[i].as_slice();
            let p = store.get_mut(id).as_mut_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for j in 0..p.len() {
                let gj = g[j] * clip;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                p[j] -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::with_warmup(1e-3, 100, 0.1);
        assert_eq!(s.warmup_steps, 5);
        assert!((s.at(0) - 2e-4).abs() < 1e-15);
        assert!((s.at(4) - 1e-3).abs() < 1e-15);
        assert!((s.at(5) - 1e-3).abs() < 1e-15);
        assert!((s.at(100) - 1e-4).abs() < 1e-15);
        let flat = LrSchedule::with_warmup(1e-3, 100, 1.0);
        assert!((flat.at(60) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Mat::from_vec(1, 2, alloc::vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(&store);
        for _ in 0..2000 {
            let x = store.get(id).clone();
            let g = x.map(|v| 2.0 * (v - 0.5));
            opt.step(&mut store, &[g], 1e-2).unwrap();
        }
        assert!(store.get(id).as_slice().iter().all(|v| (v - 0.5).abs() < 1e-3));
    }
}
