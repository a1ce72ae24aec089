//! Precoders, power allocation and the two representative-channel tasks.
//!
//! Single-BS: the precoder for a representative channel is its leading
//! `N_l` right singular vectors scaled to unit Frobenius norm, scored by the
//! time/subcarrier average of `log2(1 + ‖H W‖₂² / σ²)` on the real channels.
//!
//! Dual-BS: per subcarrier the stacked channel `[H1, H2]` is beamformed along
//! its top right singular vector, and the combined power `P1 + P2` across
//! subcarriers comes from water-filling on `λ_k² / σ²` with budget `2 N_k`.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;


use crate::chanmodel::ChannelTensor;
use crate::error::{bail, Error, Result};
use crate::linalg::{svd, CMat};
use crate::C64;

/// Floor reported for a perfect reconstruction.
pub const NMSE_FLOOR_DB: f64 = -300.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecoderSpec {
    pub n_layers: usize,
    pub noise_var: f64,
}

impl PrecoderSpec {
    pub fn new(n_layers: usize, noise_var: f64) -> Result<Self> {
        if n_layers == 0 {
            bail!(InvalidArgument, "n_layers must be at least 1");
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            bail!(InvalidArgument, "noise_var must be positive, got {}", noise_var);
        }
        Ok(Self { n_layers, noise_var })
    }
}

/// A precoder and the power it carries (`‖W‖_F²`).
#[derive(Debug, Clone, PartialEq)]
pub struct PrecodingMatrix {
    pub data: CMat,
    pub power: f64,
}

impl PrecodingMatrix {
    /// Split a stacked `2 N_T x 1` dual precoder into the per-BS halves.
    pub fn halves(&self) -> Result<(CMat, CMat)> {
        let n = self.data.rows();
        if n % 2 != 0 {
            bail!(ShapeMismatch, "stacked precoder has odd row count {}", n);
        }
        let h = n / 2;
        let cols = self.data.cols();
        let top = CMat::from_fn(h, cols, |r, c| self.data[(r, c)]);
        let bottom = CMat::from_fn(h, cols, |r, c| self.data[(r + h, c)]);
        Ok((top, bottom))
    }
}

/// Water-filling result: per-subcarrier combined power `P1 + P2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub power: Vec<f64>,
    pub water_level: f64,
    /// Every gain was zero; nothing was allocated.
    pub degenerate: bool,
}

/// `W = V_{N_l}(H) / ‖V_{N_l}(H)‖_F`.
pub fn svd_precoder(h: &CMat, spec: &PrecoderSpec) -> Result<PrecodingMatrix> {
    let (nr, nt) = h.shape();
    if spec.n_layers > nr.min(nt) {
        bail!(InvalidArgument, "n_layers {} exceeds min({}, {})", spec.n_layers, nr, nt);
    }
    let d = svd(h)?;
    let v = d.v.leading_cols(spec.n_layers);
    let f = v.frobenius();
    Ok(PrecodingMatrix { data: v.scale(C64::new(1.0 / f, 0.0)), power: 1.0 })
}

/// `log2(1 + ‖H W‖₂² / σ²)` with the spectral norm of the product.
pub fn se_single(h: &CMat, w: &CMat, noise_var: f64) -> Result<f64> {
    let hw = h.matmul(w)?;
    let g = hw.spectral_norm()?;
    Ok((g * g / noise_var).ln_1p() / core::f64::consts::LN_2)
}

fn check_rep(rep: &[CMat], nk: usize, rows: usize, cols: usize) -> Result<()> {
    if rep.len() != nk {
        bail!(ShapeMismatch, "representative has {} subcarriers, channel has {}", rep.len(), nk);
    }
    if let Some(m) = rep.iter().find(|m| m.shape() != (rows, cols)) {
        bail!(ShapeMismatch, "representative matrix {:?}, expected {:?}", m.shape(), (rows, cols));
    }
    Ok(())
}

/// Average single-BS spectral efficiency of `tensor` under the SVD precoders
/// of `rep` (one `N_R x N_T` matrix per subcarrier).
pub fn task1(tensor: &ChannelTensor, rep: &[CMat], spec: &PrecoderSpec) -> Result<f64> {
    let [nt, nk, nr, ntx] = tensor.shape();
    check_rep(rep, nk, nr, ntx)?;
    let precoders = rep.iter().map(|r| svd_precoder(r, spec)).collect::<Result<Vec<_>>>()?;
    let mut acc = 0.0;
    for t in 0..nt {
        for (k, w) in precoders.iter().enumerate() {
            acc += se_single(&tensor.matrix(t, k), &w.data, spec.noise_var)?;
        }
    }
    Ok(acc / (nt * nk) as f64)
}

/// `[H1, H2]`.
pub fn stack_dual(h1: &CMat, h2: &CMat) -> Result<CMat> {
    h1.hstack(h2)
}

/// Maximise `Σ log2(1 + c_k P_k)` subject to `Σ P_k = budget`, `P_k ≥ 0`.
pub fn waterfill(gains: &[f64], budget: f64) -> Result<PowerAllocation> {
    if !(budget > 0.0 && budget.is_finite()) {
        bail!(InvalidArgument, "power budget must be positive, got {}", budget);
    }
    if gains.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        bail!(InvalidArgument, "gains must be finite and non-negative");
    }
    let mut active: Vec<(f64, usize)> =
        gains.iter().enumerate().filter(|(_, c)| **c > 0.0).map(|(i, c)| (1.0 / c, i)).collect();
    if active.is_empty() {
        return Ok(PowerAllocation { power: alloc::vec![0.0; gains.len()], water_level: 0.0, degenerate: true });
    }
    active.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(core::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    let mut level = 0.0;
    let mut floor_sum = 0.0;
    for m in 0..active.len() {
        floor_sum += active[m].0;
        level = (budget + floor_sum) / (m + 1) as f64;
        let next_floor = active.get(m + 1).map(|a| a.0);
        if next_floor.map_or(true, |f| level <= f) {
            break;
        }
    }
    let power = gains.iter().map(|&c| if c > 0.0 { (level - 1.0 / c).max(0.0) } else { 0.0 }).collect();
    Ok(PowerAllocation { power, water_level: level, degenerate: false })
}

/// `Σ_k log2(1 + c_k P_k)`.
pub fn dual_objective(gains: &[f64], power: &[f64]) -> f64 {
    gains.iter().zip(power).map(|(c, p)| (c * p).ln_1p()).sum::<f64>() / core::f64::consts::LN_2
}

/// `W = V_1([H1, H2]) √P`, a `2 N_T x 1` vector with `‖W‖_F² = P`.
pub fn dual_precoder(hstack: &CMat, power: f64) -> Result<PrecodingMatrix> {
    if !(power >= 0.0 && power.is_finite()) {
        bail!(InvalidArgument, "power must be non-negative, got {}", power);
    }
    let d = svd(hstack)?;
    let v = d.v.leading_cols(1);
    Ok(PrecodingMatrix { data: v.scale(C64::new(power.sqrt(), 0.0)), power })
}

/// Per-subcarrier dual precoders of a stacked representative channel.
pub fn dual_precoders(rep_stacked: &[CMat], noise_var: f64) -> Result<(Vec<PrecodingMatrix>, PowerAllocation)> {
    let mut gains = Vec::with_capacity(rep_stacked.len());
    for r in rep_stacked {
        let l = svd(r)?.singular_values[0];
        gains.push(l * l / noise_var);
    }
    let alloc_ = waterfill(&gains, 2.0 * rep_stacked.len() as f64)?;
    let ws = rep_stacked
        .iter()
        .zip(&alloc_.power)
        .map(|(r, &p)| dual_precoder(r, p))
        .collect::<Result<Vec<_>>>()?;
    Ok((ws, alloc_))
}

/// Average joint spectral efficiency of two BSs' channels when precoding with
/// the stacked representative (`N_k` matrices of `N_R x 2 N_T`).
pub fn task2(first: &ChannelTensor, second: &ChannelTensor, rep_stacked: &[CMat], noise_var: f64) -> Result<f64> {
    let [nt, nk, nr, ntx] = first.shape();
    if second.shape() != first.shape() {
        bail!(ShapeMismatch, "BS tensors {:?} and {:?}", first.shape(), second.shape());
    }
    check_rep(rep_stacked, nk, nr, 2 * ntx)?;
    let (ws, _) = dual_precoders(rep_stacked, noise_var)?;
    let halves = ws.iter().map(|w| w.halves()).collect::<Result<Vec<_>>>()?;
    let mut acc = 0.0;
    for t in 0..nt {
        for (k, (u1, u2)) in halves.iter().enumerate() {
            let y = first.matrix(t, k).matmul(u1)?.add(&second.matrix(t, k).matmul(u2)?)?;
            acc += (y.frobenius_sqr() / noise_var).ln_1p() / core::f64::consts::LN_2;
        }
    }
    Ok(acc / (nt * nk) as f64)
}

/// Which task a representative is scored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Single { n_layers: usize },
    Dual,
}

/// Real channels a representative is evaluated against.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Single(&'a ChannelTensor),
    Dual(&'a ChannelTensor, &'a ChannelTensor),
}

impl<'a> Target<'a> {
    pub fn n_times(&self) -> usize {
        match self {
            Target::Single(t) | Target::Dual(t, _) => t.n_times(),
        }
    }

    /// Observed channel at time `t` in representative layout (stacked for dual).
    pub fn candidate(&self, t: usize) -> Result<Vec<CMat>> {
        match self {
            Target::Single(x) => Ok(x.snapshot(t)),
            Target::Dual(a, b) => {
                (0..a.n_subcarriers()).map(|k| stack_dual(&a.matrix(t, k), &b.matrix(t, k))).collect()
            }
        }
    }
}

/// Task score of a representative channel.
pub fn score(target: Target<'_>, rep: &[CMat], task: TaskKind, noise_var: f64) -> Result<f64> {
    match (target, task) {
        (Target::Single(t), TaskKind::Single { n_layers }) => task1(t, rep, &PrecoderSpec::new(n_layers, noise_var)?),
        (Target::Dual(a, b), TaskKind::Dual) => task2(a, b, rep, noise_var),
        _ => bail!(InvalidArgument, "task {:?} does not match the target kind", task),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Traversal {
    pub index: usize,
    pub representative: Vec<CMat>,
    pub score: f64,
}

/// Best observed time slice as representative; ties go to the lowest index.
pub fn representative_traversal(target: Target<'_>, task: TaskKind, noise_var: f64) -> Result<Traversal> {
    let mut best: Option<Traversal> = None;
    for t in 0..target.n_times() {
        let rep = target.candidate(t)?;
        let s = score(target, &rep, task, noise_var)?;
        if best.as_ref().map_or(true, |b| s > b.score) {
            best = Some(Traversal { index: t, representative: rep, score: s });
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("target has no time slices".into()))
}

/// `10 log10` of the mean over `(entry, t)` of `‖H - Ĥ‖² / ‖H‖²`.
pub fn nmse(original: &[&ChannelTensor], recon: &[&ChannelTensor]) -> Result<f64> {
    if original.len() != recon.len() {
        bail!(ShapeMismatch, "{} original entries, {} reconstructed", original.len(), recon.len());
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (h, g) in original.iter().zip(recon) {
        if h.shape() != g.shape() {
            bail!(ShapeMismatch, "tensor {:?} vs {:?}", h.shape(), g.shape());
        }
        for t in 0..h.n_times() {
            let (a, b) = (h.time_slice(t), g.time_slice(t));
            let den: f64 = a.iter().map(|z| z.norm_sqr()).sum();
            if den == 0.0 {
                bail!(Degenerate, "zero-norm channel in nmse");
            }
            let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
            acc += num / den;
            count += 1;
        }
    }
    if count == 0 {
        bail!(InvalidArgument, "nmse of an empty set");
    }
    let mean = acc / count as f64;
    Ok(if mean > 0.0 { (10.0 * mean.log10()).max(NMSE_FLOOR_DB) } else { NMSE_FLOOR_DB })
}

/// NMSE between two datasets with matching entry order.
pub fn nmse_dataset(original: &crate::chanmodel::Dataset, recon: &crate::chanmodel::Dataset) -> Result<f64> {
    let a: Vec<&ChannelTensor> = original.entries.iter().map(|e| &e.tensor).collect();
    let b: Vec<&ChannelTensor> = recon.entries.iter().map(|e| &e.tensor).collect();
    nmse(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_fn(rows, cols, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> CMat {
        let v = random(n, 1, rng);
        let f = v.frobenius();
        v.scale(c(1.0 / f))
    }

    fn tensor(nt: usize, nk: usize, nr: usize, ntx: usize, rng: &mut ChaCha8Rng) -> ChannelTensor {
        let snaps: Vec<Vec<CMat>> = (0..nt).map(|_| (0..nk).map(|_| random(nr, ntx, rng)).collect()).collect();
        ChannelTensor::from_snapshots(&snaps, [0.0; 3]).unwrap()
    }

    #[test]
    fn svd_precoder_rank_one() {
        // singular values [2, 1]: top right vector is e1
        let h = CMat::from_fn(2, 2, |r, col| c(if r == col { [2.0, 1.0][r] } else { 0.0 }));
        let w = svd_precoder(&h, &PrecoderSpec::new(1, 1.0).unwrap()).unwrap();
        let hw = h.matmul(&w.data).unwrap();
        assert!((hw.frobenius_sqr() - 4.0).abs() < 1e-12);
        assert!((w.data.frobenius() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_precoder_identity_two_layers() {
        let h = CMat::identity(2);
        let w = svd_precoder(&h, &PrecoderSpec::new(2, 1.0).unwrap()).unwrap();
        assert!((w.data.frobenius() - 1.0).abs() < 1e-12);
        assert!((h.matmul(&w.data).unwrap().frobenius_sqr() - 1.0).abs() < 1e-12);
        assert!(svd_precoder(&h, &PrecoderSpec::new(3, 1.0).unwrap()).is_err());
    }

    #[test]
    fn svd_precoder_beats_random_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = random(4, 8, &mut rng);
        let w = svd_precoder(&h, &PrecoderSpec::new(1, 1.0).unwrap()).unwrap();
        let best = se_single(&h, &w.data, 1.0).unwrap();
        for _ in 0..1000 {
            let v = random_unit(8, &mut rng);
            assert!(se_single(&h, &v, 1.0).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn svd_precoder_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let spec = PrecoderSpec::new(1, 1.0).unwrap();
        for _ in 0..20 {
            let h = random(3, 6, &mut rng);
            let s = 0.01 + rng.random::<f64>() * 100.0;
            let a = svd_precoder(&h, &spec).unwrap().data;
            let b = svd_precoder(&h.scale(c(s)), &spec).unwrap().data;
            let ip = crate::linalg::inner(a.as_slice(), b.as_slice()).norm();
            assert!((ip - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn se_single_examples() {
        let h = CMat::from_fn(1, 1, |_, _| c(2.0));
        let w = CMat::from_fn(1, 1, |_, _| c(1.0));
        assert!((se_single(&h, &w, 1.0).unwrap() - 5f64.log2()).abs() < 1e-12);
        assert_eq!(se_single(&CMat::zeros(2, 3), &CMat::zeros(3, 1), 1.0).unwrap(), 0.0);
        let mut prev = f64::INFINITY;
        for s2 in [0.1, 1.0, 10.0, 1e3, 1e9] {
            let v = se_single(&h, &w, s2).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-8);
        assert!(se_single(&h, &CMat::zeros(2, 1), 1.0).is_err());
    }

    #[test]
    fn task1_with_own_channel_is_per_subcarrier_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let t = tensor(1, 3, 2, 4, &mut rng);
        let spec = PrecoderSpec::new(1, 0.5).unwrap();
        let own = task1(&t, &t.snapshot(0), &spec).unwrap();
        let mut want = 0.0;
        for k in 0..3 {
            let s = svd(&t.matrix(0, k)).unwrap().singular_values[0];
            want += (1.0 + s * s / 0.5).log2() / 3.0;
        }
        assert!((own - want).abs() < 1e-12);
        for _ in 0..20 {
            let other: Vec<CMat> = (0..3).map(|_| random(2, 4, &mut rng)).collect();
            assert!(task1(&t, &other, &spec).unwrap() <= own + 1e-12);
        }
    }

    #[test]
    fn task1_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let t = tensor(2, 2, 2, 3, &mut rng);
        let rep: Vec<CMat> = (0..2).map(|_| random(2, 3, &mut rng)).collect();
        // independent route: eigenvector of R^H R by power iteration, scalar SE sum
        let mut want = 0.0;
        for k in 0..2 {
            let g = rep[k].adjoint().matmul(&rep[k]).unwrap();
            let mut x = CMat::from_fn(3, 1, |i, _| c(1.0 + i as f64));
            for _ in 0..3000 {
                let y = g.matmul(&x).unwrap();
                x = y.scale(c(1.0 / y.frobenius()));
            }
            for ti in 0..2 {
                let hw = t.matrix(ti, k).matmul(&x).unwrap();
                want += (1.0 + hw.frobenius_sqr() / 0.7).log2();
            }
        }
        want /= 4.0;
        let got = task1(&t, &rep, &PrecoderSpec::new(1, 0.7).unwrap()).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn stack_dual_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let h1 = random(4, 32, &mut rng);
        let h2 = random(4, 32, &mut rng);
        assert_eq!(stack_dual(&h1, &h2).unwrap().shape(), (4, 64));
        let s1 = svd(&h1).unwrap().singular_values;
        let s0 = svd(&stack_dual(&h1, &CMat::zeros(4, 32)).unwrap()).unwrap().singular_values;
        assert!(s1.iter().zip(&s0).all(|(a, b)| (a - b).abs() < 1e-12));
        let sd = svd(&stack_dual(&h1, &h1).unwrap()).unwrap().singular_values[0];
        assert!((sd - 2f64.sqrt() * s1[0]).abs() < 1e-12);
        assert!(stack_dual(&h1, &random(3, 32, &mut rng)).is_err());
    }

    /// Exhaustive search over a two-subcarrier split at step `h`.
    fn grid_best_two(inv: [f64; 2], budget: f64, h: f64) -> [f64; 2] {
        let n = (budget / h).round() as usize;
        let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
        for i in 0..=n {
            let p = [i as f64 * h, budget - i as f64 * h];
            let v = (1.0 + p[0] / inv[0]).ln() + (1.0 + p[1] / inv[1]).ln();
            if v > best.0 {
                best = (v, p);
            }
        }
        best.1
    }

    #[test]
    fn waterfill_examples() {
        let a = waterfill(&[1.0, 1.0], 4.0).unwrap();
        assert_eq!(a.power, vec![2.0, 2.0]);

        // Frozen from grid_best_two(.., 4.0, 1e-3): [3.0, 1.0] and [4.0, 0.0].
        for (inv, want) in [([1.0, 3.0], [3.0, 1.0]), ([1.0, 100.0], [4.0, 0.0])] {
            let oracle = grid_best_two(inv, 4.0, 1e-3);
            assert!((oracle[0] - want[0]).abs() < 1e-9 && (oracle[1] - want[1]).abs() < 1e-9);
            let got = waterfill(&[1.0 / inv[0], 1.0 / inv[1]], 4.0).unwrap().power;
            assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn waterfill_degenerate_and_errors() {
        let a = waterfill(&[0.0, 0.0, 0.0], 6.0).unwrap();
        assert!(a.degenerate);
        assert_eq!(a.power, vec![0.0; 3]);
        let b = waterfill(&[0.0, 2.0], 2.0).unwrap();
        assert_eq!(b.power[0], 0.0);
        assert!((b.power[1] - 2.0).abs() < 1e-12);
        assert!(waterfill(&[-1.0], 1.0).is_err());
        assert!(waterfill(&[1.0], 0.0).is_err());
        assert!(waterfill(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn dual_precoder_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let h = random(2, 6, &mut rng);
        let z = dual_precoder(&h, 0.0).unwrap();
        assert!(z.data.as_slice().iter().all(|x| x.norm() == 0.0));
        let u = dual_precoder(&h, 1.0).unwrap();
        assert!((u.data.frobenius() - 1.0).abs() < 1e-12);
        let p = 2.5;
        let w = dual_precoder(&h, p).unwrap();
        assert!((w.data.frobenius_sqr() - p).abs() < 1e-12);
        let l = svd(&h).unwrap().singular_values[0];
        let achieved = (1.0 + h.matmul(&w.data).unwrap().frobenius_sqr() / 0.3).log2();
        let summand = (1.0 + l * l * p / 0.3).log2();
        assert!((achieved - summand).abs() < 1e-12);
        let (a, b) = w.halves().unwrap();
        assert_eq!((a.rows(), b.rows()), (3, 3));
    }

    #[test]
    fn task2_own_channel_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let a = tensor(1, 3, 2, 3, &mut rng);
        let b = tensor(1, 3, 2, 3, &mut rng);
        let target = Target::Dual(&a, &b);
        let rep = target.candidate(0).unwrap();
        let got = task2(&a, &b, &rep, 0.4).unwrap();
        let gains: Vec<f64> = rep.iter().map(|r| svd(r).unwrap().singular_values[0].powi(2) / 0.4).collect();
        let alloc_ = waterfill(&gains, 6.0).unwrap();
        let want = dual_objective(&gains, &alloc_.power) / 3.0;
        assert!((got - want).abs() < 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn task2_power_on_one_subcarrier() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let a = tensor(2, 3, 2, 2, &mut rng);
        let b = tensor(2, 3, 2, 2, &mut rng);
        // only subcarrier 1 has a non-zero representative
        let mut rep: Vec<CMat> = (0..3).map(|_| CMat::zeros(2, 4)).collect();
        rep[1] = random(2, 4, &mut rng);
        let got = task2(&a, &b, &rep, 1.0).unwrap();
        let w = dual_precoder(&rep[1], 6.0).unwrap();
        let mut want = 0.0;
        for t in 0..2 {
            let hs = stack_dual(&a.matrix(t, 1), &b.matrix(t, 1)).unwrap();
            want += (1.0 + hs.matmul(&w.data).unwrap().frobenius_sqr()).log2();
        }
        want /= 6.0;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn task2_grid_search_oracle() {
        // N_R = 1, N_T = 1 per BS, one subcarrier: W = [w1, w2] with |w1|²+|w2|² = 2
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let a = tensor(1, 1, 1, 1, &mut rng);
        let b = tensor(1, 1, 1, 1, &mut rng);
        let rep = Target::Dual(&a, &b).candidate(0).unwrap();
        let got = task2(&a, &b, &rep, 1.0).unwrap();
        let (h1, h2) = (a.matrix(0, 0)[(0, 0)], b.matrix(0, 0)[(0, 0)]);
        let mut best = 0.0f64;
        let n = 400;
        for i in 0..=n {
            let theta = core::f64::consts::FRAC_PI_2 * i as f64 / n as f64;
            for j in 0..n {
                let phi = core::f64::consts::TAU * j as f64 / n as f64;
                let w1 = 2f64.sqrt() * theta.cos();
                let w2 = C64::from_polar(2f64.sqrt() * theta.sin(), phi);
                let y = h1 * w1 + h2 * w2;
                best = best.max((1.0 + y.norm_sqr()).log2());
            }
        }
        assert!((got - best).abs() < 1e-3, "{got} vs {best}");
        assert!(got >= best - 1e-12);
    }

    #[test]
    fn traversal_ties_and_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let one = tensor(1, 2, 2, 2, &mut rng);
        let r = representative_traversal(Target::Single(&one), TaskKind::Single { n_layers: 1 }, 1.0).unwrap();
        assert_eq!(r.index, 0);

        let snap: Vec<CMat> = (0..2).map(|_| random(2, 2, &mut rng)).collect();
        let same = ChannelTensor::from_snapshots(&[snap.clone(), snap.clone(), snap], [0.0; 3]).unwrap();
        let r = representative_traversal(Target::Single(&same), TaskKind::Single { n_layers: 1 }, 1.0).unwrap();
        assert_eq!(r.index, 0);

        let four = tensor(4, 2, 2, 3, &mut rng);
        let spec = PrecoderSpec::new(1, 1.0).unwrap();
        let scores: Vec<f64> = (0..4).map(|t| task1(&four, &four.snapshot(t), &spec).unwrap()).collect();
        let r = representative_traversal(Target::Single(&four), TaskKind::Single { n_layers: 1 }, 1.0).unwrap();
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.score, best);
        assert!(scores.iter().all(|s| *s <= r.score));

        let b = tensor(4, 2, 2, 3, &mut rng);
        let r2 = representative_traversal(Target::Dual(&four, &b), TaskKind::Dual, 1.0).unwrap();
        for t in 0..4 {
            let rep = Target::Dual(&four, &b).candidate(t).unwrap();
            assert!(task2(&four, &b, &rep, 1.0).unwrap() <= r2.score);
        }
        assert!(score(Target::Single(&four), &r2.representative, TaskKind::Dual, 1.0).is_err());
    }

    #[test]
    fn nmse_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let t = tensor(2, 2, 2, 2, &mut rng);
        assert_eq!(nmse(&[&t], &[&t]).unwrap(), NMSE_FLOOR_DB);
        let zero = t.scaled(0.0);
        assert!(nmse(&[&t], &[&zero]).unwrap().abs() < 1e-12);
        assert!(nmse(&[&zero], &[&t]).is_err());

        let noisy = ChannelTensor::new(t.shape(), t.data().iter().map(|z| z * 1.1).collect(), t.loc).unwrap();
        let s = C64::from_polar(3.0, 0.7);
        let scale = |x: &ChannelTensor| ChannelTensor::new(x.shape(), x.data().iter().map(|z| z * s).collect(), x.loc).unwrap();
        let base = nmse(&[&t], &[&noisy]).unwrap();
        assert!((base - 10.0 * 0.01f64.log10()).abs() < 1e-9);
        let scaled = nmse(&[&scale(&t)], &[&scale(&noisy)]).unwrap();
        assert!((base - scaled).abs() < 1e-9);
    }
}
