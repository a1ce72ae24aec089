//! Conditional DDPM over encoder representations.
//!
//! Latents are centred and scaled to unit variance before diffusion. The
//! noise network is a 1-D U-Net whose cross-attention token is the
//! sinusoidal step embedding plus an MLP embedding of the z-scored location.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{bail, Error, Result};
use crate::nn::{positional_encoding, Adam, Graph, Init, LrSchedule, Mat, Mlp, ParamStore, UNet1d, UNetConfig, Var};
use crate::repr::{StepRecord, TrainConfig};
use crate::rng::{domain, stream};

/// Variance schedule `δ_s = intercept + slope·s`, `s = 1..=n_steps`, and the
/// derived tables. Vectors are indexed by `s - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub n_steps: usize,
    pub intercept: f64,
    pub slope: f64,
    delta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    delta_tilde: Vec<f64>,
}

/// Reference schedule constants: 600 steps, `δ_s = 1e-4 + 1.65e-5·s`.
pub const REFERENCE_STEPS: usize = 600;
pub const REFERENCE_INTERCEPT: f64 = 1e-4;
pub const REFERENCE_SLOPE: f64 = 1.65e-5;

impl DiffusionSchedule {
    pub fn linear(n_steps: usize, intercept: f64, slope: f64) -> Result<Self> {
        if n_steps == 0 {
            bail!(InvalidArgument, "schedule needs at least one step");
        }
        let delta: Vec<f64> = (1..=n_steps).map(|s| intercept + slope * s as f64).collect();
        if let Some(d) = delta.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
            bail!(InvalidArgument, "variance {} outside (0, 1)", d);
        }
        let alpha: Vec<f64> = delta.iter().map(|d| 1.0 - d).collect();
        let mut alpha_bar = Vec::with_capacity(n_steps);
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let delta_tilde = (0..n_steps)
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bar[i]) * delta[i]
            })
            .collect();
        Ok(Self { n_steps, intercept, slope, delta, alpha, alpha_bar, delta_tilde })
    }

    pub fn reference() -> Self {
        // constants are in range
        Self::linear(REFERENCE_STEPS, REFERENCE_INTERCEPT, REFERENCE_SLOPE).expect("reference schedule")
    }

    /// Shorter schedule whose slope is scaled by `(600 / n)²`, keeping the
    /// total injected variance close to the reference.
    pub fn compressed(n_steps: usize) -> Result<Self> {
        let r = REFERENCE_STEPS as f64 / n_steps as f64;
        Self::linear(n_steps, REFERENCE_INTERCEPT, REFERENCE_SLOPE * r * r)
    }

    fn check(&self, s: usize) -> Result<usize> {
        if s == 0 || s > self.n_steps {
            return Err(Error::OutOfRange { index: s, len: self.n_steps + 1 });
        }
        Ok(s - 1)
    }

    pub fn delta(&self, s: usize) -> Result<f64> {
        Ok(self.delta[self.check(s)?])
    }

    pub fn alpha(&self, s: usize) -> Result<f64> {
        Ok(self.alpha[self.check(s)?])
    }

    /// `ᾱ_s`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, s: usize) -> Result<f64> {
        if s == 0 {
            return Ok(1.0);
        }
        Ok(self.alpha_bar[self.check(s)?])
    }

    pub fn delta_tilde(&self, s: usize) -> Result<f64> {
        Ok(self.delta_tilde[self.check(s)?])
    }
}

/// `F_s = √ᾱ_s F_0 + √(1 − ᾱ_s) z`.
pub fn forward_sample(f0: &[f64], s: usize, noise: &[f64], schedule: &DiffusionSchedule) -> Result<Vec<f64>> {
    if f0.len() != noise.len() {
        bail!(ShapeMismatch, "latent {} vs noise {}", f0.len(), noise.len());
    }
    let ab = schedule.alpha_bar(schedule.check(s).map(|i| i + 1)?)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(f0.iter().zip(noise).map(|(x, z)| a * x + b * z).collect())
}

/// Posterior mean of `F_{s-1}` given `F_s` and `F_0`.
pub fn posterior_mean_from_f0(fs: &[f64], f0: &[f64], s: usize, schedule: &DiffusionSchedule) -> Result<Vec<f64>> {
    if fs.len() != f0.len() {
        bail!(ShapeMismatch, "latent {} vs {}", fs.len(), f0.len());
    }
    let (d, a, ab) = (schedule.delta(s)?, schedule.alpha(s)?, schedule.alpha_bar(s)?);
    let ab_prev = schedule.alpha_bar(s - 1)?;
    let cs = a.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    let c0 = ab_prev.sqrt() * d / (1.0 - ab);
    Ok(fs.iter().zip(f0).map(|(x, y)| cs * x + c0 * y).collect())
}

/// Posterior mean of `F_{s-1}` given `F_s` and the noise `z`:
/// `(F_s − δ_s/√(1 − ᾱ_s) z) / √α_s`.
pub fn posterior_mean_from_noise(fs: &[f64], z: &[f64], s: usize, schedule: &DiffusionSchedule) -> Result<Vec<f64>> {
    if fs.len() != z.len() {
        bail!(ShapeMismatch, "latent {} vs noise {}", fs.len(), z.len());
    }
    let (d, a, ab) = (schedule.delta(s)?, schedule.alpha(s)?, schedule.alpha_bar(s)?);
    let k = d / (1.0 - ab).sqrt();
    let inv = 1.0 / a.sqrt();
    Ok(fs.iter().zip(z).map(|(x, e)| inv * (x - k * e)).collect())
}

/// Per-axis z-scoring of locations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocNorm {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl LocNorm {
    pub fn fit(locs: &[[f64; 3]]) -> Result<Self> {
        if locs.is_empty() {
            bail!(InvalidArgument, "no locations");
        }
        let n = locs.len() as f64;
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for a in 0..3 {
            mean[a] = locs.iter().map(|l| l[a]).sum::<f64>() / n;
            let var = locs.iter().map(|l| (l[a] - mean[a]).powi(2)).sum::<f64>() / n;
            // constant axes pass through centred
            std[a] = if var > 1e-18 { var.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, loc: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| (loc[a] - self.mean[a]) / self.std[a])
    }
}

/// Centre and scale applied to latents before diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNorm {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl LatentNorm {
    pub fn fit(latents: &[&[f64]]) -> Result<Self> {
        let Some(first) = latents.first() else { bail!(InvalidArgument, "no latents") };
        let d = first.len();
        if latents.iter().any(|l| l.len() != d) {
            bail!(ShapeMismatch, "latents of differing length");
        }
        let n = latents.len() as f64;
        let mut mean = vec![0.0; d];
        for l in latents {
            for (m, x) in mean.iter_mut().zip(*l) {
                *m += x / n;
            }
        }
        let var = latents.iter().map(|l| l.iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>()).sum::<f64>()
            / (n * d as f64);
        let std = if var > 1e-24 { var.sqrt() } else { 1.0 };
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.mean).map(|(x, m)| (x - m) / self.std).collect()
    }

    pub fn denormalize(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.mean).map(|(x, m)| x * self.std + m).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub n_re: usize,
    pub width: usize,
    pub d_cond: usize,
    pub n_heads: usize,
    pub kernel: usize,
    pub n_steps: usize,
    pub intercept: f64,
    pub slope: f64,
}

impl GeneratorConfig {
    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.n_steps, self.intercept, self.slope)
    }
}

/// `𝒞(loc)` and `𝒫(s)` plus the U-Net.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseNet {
    pub config: GeneratorConfig,
    cond: Mlp,
    unet: UNet1d,
}

impl NoiseNet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        let unet_cfg = UNetConfig {
            len: config.n_re,
            width: config.width,
            d_cond: config.d_cond,
            n_heads: config.n_heads,
            kernel: config.kernel,
        };
        let unet = UNet1d::new(store, "noise.unet", unet_cfg, rng)?;
        let cond = Mlp::new(store, "noise.cond", 3, config.d_cond, config.d_cond, Init::FanIn, rng);
        Ok(Self { config, cond, unet })
    }

    /// Conditioning embedding `𝒞(loc)` of an already z-scored location.
    pub fn condition(&self, g: &mut Graph<'_>, loc: [f64; 3]) -> Result<Var> {
        let x = g.input(Mat::row_vector(&loc));
        self.cond.forward(g, x)
    }

    pub fn time_embedding(&self, s: usize) -> Result<Mat> {
        Ok(Mat::row_vector(&positional_encoding(s, self.config.d_cond)?))
    }

    /// Predicted noise, `n_re x 1`.
    pub fn forward(&self, g: &mut Graph<'_>, x: &[f64], s: usize, cond: Var) -> Result<Var> {
        let xi = g.input(Mat::from_vec(x.len(), 1, x.to_vec())?);
        let t = g.input(self.time_embedding(s)?);
        self.unet.forward(g, xi, cond, t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub net: NoiseNet,
    pub store: ParamStore,
    pub schedule: DiffusionSchedule,
    pub loc_norm: LocNorm,
    pub latent_norm: LatentNorm,
}

impl Generator {
    /// Untrained generator with fitted normalisers.
    pub fn new(config: GeneratorConfig, loc_norm: LocNorm, latent_norm: LatentNorm, seed: u64) -> Result<Self> {
        if latent_norm.mean.len() != config.n_re {
            bail!(ShapeMismatch, "latent normaliser of length {}, n_re {}", latent_norm.mean.len(), config.n_re);
        }
        let mut rng = stream(seed, domain::INIT, &[domain::GENERATOR]);
        let mut store = ParamStore::new();
        let net = NoiseNet::new(&mut store, config, &mut rng)?;
        Ok(Self { net, store, schedule: config.schedule()?, loc_norm, latent_norm })
    }

    /// Noise prediction on a normalised latent.
    pub fn predict_noise(&self, x: &[f64], s: usize, loc: [f64; 3]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let c = self.net.condition(&mut g, self.loc_norm.apply(loc))?;
        let y = self.net.forward(&mut g, x, s, c)?;
        Ok(g.tape.value(y).as_slice().to_vec())
    }

    /// Ancestral sampling of one latent from `rng`, returned in
    /// representation units.
    pub fn sample_one<R: Rng + ?Sized>(&self, loc: [f64; 3], rng: &mut R) -> Result<Vec<f64>> {
        let n = self.net.config.n_re;
        let mut g0 = Graph::new(&self.store);
        let cond_v = self.net.condition(&mut g0, self.loc_norm.apply(loc))?;
        let cond = g0.tape.value(cond_v).clone();
        let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for s in (1..=self.schedule.n_steps).rev() {
            let mut g = Graph::new(&self.store);
            let c = g.input(cond.clone());
            let eps_v = self.net.forward(&mut g, &x, s, c)?;
            let eps = g.tape.value(eps_v).as_slice();
            let mut mean = posterior_mean_from_noise(&x, eps, s, &self.schedule)?;
            if s > 1 {
                let sd = self.schedule.delta_tilde(s)?.sqrt();
                for m in mean.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *m += sd * z;
                }
            }
            x = mean;
        }
        Ok(self.latent_norm.denormalize(&x))
    }

    /// `n` latents; sample `i` uses its own stream derived from `(seed, i)`,
    /// so the first `m` samples do not depend on `n`.
    pub fn sample(&self, loc: [f64; 3], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        (0..n).map(|i| self.sample_one(loc, &mut sample_stream(seed, i))).collect()
    }
}

pub fn sample_stream(seed: u64, index: usize) -> crate::rng::Stream {
    stream(seed, domain::SAMPLE, &[index as u64])
}

/// Train the noise network on `(loc, F)` pairs with the simplified loss
/// `‖z − 𝒩(√ᾱ_s F + √(1 − ᾱ_s) z, s, loc)‖²`, averaged over the batch.
pub fn train_generator(
    data: &[([f64; 3], Vec<f64>)],
    config: GeneratorConfig,
    train: &TrainConfig,
) -> Result<(Generator, Vec<StepRecord>)> {
    train.validate()?;
    if data.is_empty() {
        bail!(InvalidArgument, "no training latents");
    }
    let locs: Vec<[f64; 3]> = data.iter().map(|(l, _)| *l).collect();
    let lats: Vec<&[f64]> = data.iter().map(|(_, f)| f.as_slice()).collect();
    let mut gen = Generator::new(config, LocNorm::fit(&locs)?, LatentNorm::fit(&lats)?, train.seed)?;
    let normed: Vec<Vec<f64>> = lats.iter().map(|f| gen.latent_norm.normalize(f)).collect();
    let zlocs: Vec<[f64; 3]> = locs.iter().map(|l| gen.loc_norm.apply(*l)).collect();
    let mut opt = Adam::new(&gen.store);
    let schedule = LrSchedule::with_warmup(train.lr, train.steps, train.final_lr_frac);
    let mut rng = stream(train.seed, domain::GENERATOR, &[]);
    let mut log = Vec::with_capacity(train.steps);
    let n = config.n_re;
    for step in 0..train.steps {
        let lr = schedule.at(step);
        let (loss, grads) = {
            let mut g = Graph::new(&gen.store);
            let mut terms = Vec::with_capacity(train.batch_size);
            for _ in 0..train.batch_size {
                let i = rng.random_range(0..data.len());
                let s = rng.random_range(1..=gen.schedule.n_steps);
                let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let xs = forward_sample(&normed[i], s, &z, &gen.schedule)?;
                let c = gen.net.condition(&mut g, zlocs[i])?;
                let pred = gen.net.forward(&mut g, &xs, s, c)?;
                let target = g.input(Mat::from_vec(n, 1, z)?);
                let d = g.tape.sub(pred, target)?;
                terms.push(g.tape.sum_sqr(d)?);
            }
            let all = g.tape.concat_rows(&terms)?;
            let total = g.tape.sum(all);
            let loss = g.tape.scale(total, 1.0 / train.batch_size as f64);
            (g.tape.scalar(loss), g.grads(loss)?)
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite("generator loss"));
        }
        opt.step(&mut gen.store, &grads, lr)?;
        log.push(StepRecord { step, loss, lr, queue_fill: None });
    }
    Ok((gen, log))
}

/// Result of best-of-N generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection<T> {
    pub index: usize,
    pub best: T,
    pub score: f64,
    pub scores: Vec<f64>,
}

/// Draw `n_gen` latents, map each through `decode`, score with `score`, and
/// keep the highest (first on ties).
pub fn generate_representative<T>(
    gen: &Generator,
    loc: [f64; 3],
    n_gen: usize,
    seed: u64,
    mut decode: impl FnMut(&[f64]) -> Result<T>,
    mut score: impl FnMut(&T) -> Result<f64>,
) -> Result<Selection<T>> {
    if n_gen == 0 {
        bail!(InvalidArgument, "n_gen must be at least 1");
    }
    let mut best: Option<(usize, T, f64)> = None;
    let mut scores = Vec::with_capacity(n_gen);
    for i in 0..n_gen {
        let f = gen.sample_one(loc, &mut sample_stream(seed, i))?;
        let cand = decode(&f)?;
        let s = score(&cand)?;
        scores.push(s);
        if best.as_ref().map_or(true, |b| s > b.2) {
            best = Some((i, cand, s));
        }
    }
    let (index, best, score) = best.expect("n_gen >= 1");
    Ok(Selection { index, best, score, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_store, randomize};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn normal_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn toy_config(n_steps: usize) -> GeneratorConfig {
        let r = REFERENCE_STEPS as f64 / n_steps as f64;
        GeneratorConfig {
            n_re: 4,
            width: 4,
            d_cond: 8,
            n_heads: 2,
            kernel: 3,
            n_steps,
            intercept: REFERENCE_INTERCEPT,
            slope: REFERENCE_SLOPE * r * r,
        }
    }

    fn identity_norms(n: usize) -> (LocNorm, LatentNorm) {
        (LocNorm { mean: [0.0; 3], std: [1.0; 3] }, LatentNorm { mean: vec![0.0; n], std: 1.0 })
    }

    #[test]
    fn schedule_examples() {
        let sch = DiffusionSchedule::reference();
        assert!((sch.delta(1).unwrap() - 1.165e-4).abs() < 1e-15);
        assert!((sch.delta(600).unwrap() - 0.0100).abs() < 1e-12);
        assert_eq!(sch.delta_tilde(1).unwrap(), 0.0);
        assert_eq!(sch.alpha_bar(0).unwrap(), 1.0);
        assert!(sch.delta(0).is_err() && sch.delta(601).is_err());
        assert!(DiffusionSchedule::linear(0, 1e-4, 1e-5).is_err());
        assert!(DiffusionSchedule::linear(10, 0.5, 0.1).is_err());
        assert!(DiffusionSchedule::linear(10, -1e-3, 1e-5).is_err());
    }

    #[test]
    fn schedule_identities() {
        for sch in [DiffusionSchedule::reference(), DiffusionSchedule::compressed(100).unwrap()] {
            let mut prod = 1.0;
            for s in 1..=sch.n_steps {
                let d = sch.delta(s).unwrap();
                assert!(d > 0.0 && d < 1.0);
                prod *= 1.0 - d;
                let ab = sch.alpha_bar(s).unwrap();
                assert!((ab - prod).abs() <= 1e-12 * prod.max(1e-300));
                assert!(ab < sch.alpha_bar(s - 1).unwrap());
                let dt = (1.0 - sch.alpha_bar(s - 1).unwrap()) / (1.0 - ab) * d;
                assert!((sch.delta_tilde(s).unwrap() - dt).abs() <= 1e-12 * dt.max(1e-300));
            }
        }
        // compressing keeps the terminal signal level
        let end = DiffusionSchedule::compressed(100).unwrap().alpha_bar(100).unwrap();
        let reference = DiffusionSchedule::reference().alpha_bar(600).unwrap();
        assert!((end - reference).abs() < 0.1 * reference, "{end} vs {reference}");
    }

    #[test]
    fn forward_sample_examples() {
        let sch = DiffusionSchedule::reference();
        let f0 = [1.0, -2.0, 0.5];
        let out = forward_sample(&f0, 10, &[0.0; 3], &sch).unwrap();
        let a = sch.alpha_bar(10).unwrap().sqrt();
        for (o, x) in out.iter().zip(&f0) {
            assert!((o - a * x).abs() < 1e-15);
        }
        // the last step keeps only a few percent of the signal
        let ab = sch.alpha_bar(600).unwrap();
        assert!(ab < 0.06);
        let z = [0.3, 0.1, -0.7];
        let out = forward_sample(&f0, 600, &z, &sch).unwrap();
        for ((o, n), x) in out.iter().zip(&z).zip(&f0) {
            assert!((o - n).abs() <= ab.sqrt() * x.abs() + (1.0 - (1.0 - ab).sqrt()) * n.abs() + 1e-15);
        }
        assert!(forward_sample(&f0, 0, &z, &sch).is_err());
        assert!(forward_sample(&f0, 601, &z, &sch).is_err());
        assert!(forward_sample(&f0, 3, &z[..2], &sch).is_err());
    }

    #[test]
    fn forward_marginal_monte_carlo() {
        let sch = DiffusionSchedule::reference();
        let f0 = [0.8, -1.2, 2.0, 0.1, -0.4, 1.5, 0.0, -2.2];
        let norm2: f64 = f0.iter().map(|x| x * x).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for s in [50, 300, 600] {
            let draws = 100_000;
            let mut acc = 0.0;
            for _ in 0..draws {
                let z = normal_vec(&mut rng, f0.len());
                acc += forward_sample(&f0, s, &z, &sch).unwrap().iter().map(|x| x * x).sum::<f64>();
            }
            let ab = sch.alpha_bar(s).unwrap();
            let expect = ab * norm2 + (1.0 - ab) * f0.len() as f64;
            let got = acc / draws as f64;
            assert!((got - expect).abs() < 0.01 * expect, "s={s}: {got} vs {expect}");
        }
    }

    #[test]
    fn stepwise_kernels_match_closed_form() {
        let sch = DiffusionSchedule::compressed(100).unwrap();
        let x0 = 1.7;
        let s = 40;
        let draws = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..draws {
            let mut x = x0;
            for k in 1..=s {
                let z: f64 = rng.sample(StandardNormal);
                x = sch.alpha(k).unwrap().sqrt() * x + sch.delta(k).unwrap().sqrt() * z;
            }
            m1 += x;
            m2 += x * x;
        }
        let mean = m1 / draws as f64;
        let var = m2 / draws as f64 - mean * mean;
        let ab = sch.alpha_bar(s).unwrap();
        assert!((mean - ab.sqrt() * x0).abs() < 0.01 * ab.sqrt() * x0, "{mean}");
        assert!((var - (1.0 - ab)).abs() < 0.01 * (1.0 - ab), "{var}");
    }

    #[test]
    fn posterior_examples() {
        let sch = DiffusionSchedule::reference();
        let f0 = [0.4, -1.1, 2.5];
        let z = [1.0, 0.2, -0.6];
        let f1 = forward_sample(&f0, 1, &z, &sch).unwrap();
        for m in [posterior_mean_from_f0(&f1, &f0, 1, &sch).unwrap(), posterior_mean_from_noise(&f1, &z, 1, &sch).unwrap()] {
            for (a, b) in m.iter().zip(&f0) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        let zero = posterior_mean_from_noise(&[0.0; 3], &[0.0; 3], 7, &sch).unwrap();
        assert_eq!(zero, vec![0.0; 3]);
        assert!(posterior_mean_from_noise(&f1, &z, 0, &sch).is_err());
        assert!(posterior_mean_from_f0(&f1, &f0, 0, &sch).is_err());
    }

    proptest! {
        #[test]
        fn posterior_forms_agree(
            f0 in proptest::collection::vec(-3.0f64..3.0, 1..8),
            seed in any::<u64>(),
            s in 1usize..=600,
        ) {
            let sch = DiffusionSchedule::reference();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = normal_vec(&mut rng, f0.len());
            let fs = forward_sample(&f0, s, &z, &sch).unwrap();
            let a = posterior_mean_from_f0(&fs, &f0, s, &sch).unwrap();
            let b = posterior_mean_from_noise(&fs, &z, s, &sch).unwrap();
            let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(diff <= 1e-10 * scale);
        }
    }

    #[test]
    fn normalisers() {
        let locs = [[0.0, 1.0, 5.0], [2.0, 3.0, 5.0]];
        let ln = LocNorm::fit(&locs).unwrap();
        assert_eq!(ln.apply(locs[0]), [-1.0, -1.0, 0.0]);
        assert_eq!(ln.apply(locs[1]), [1.0, 1.0, 0.0]);
        assert!(LocNorm::fit(&[]).is_err());
        let a = [1.0, 2.0];
        let b = [3.0, -2.0];
        let lt = LatentNorm::fit(&[&a, &b]).unwrap();
        assert_eq!(lt.mean, vec![2.0, 0.0]);
        let n = lt.normalize(&a);
        let var = (n.iter().map(|x| x * x).sum::<f64>() + lt.normalize(&b).iter().map(|x| x * x).sum::<f64>()) / 4.0;
        assert!((var - 1.0).abs() < 1e-12);
        let back = lt.denormalize(&n);
        assert!(back.iter().zip(&a).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(LatentNorm::fit(&[&a[..], &[1.0][..]]).is_err());
    }

    #[test]
    fn noise_net_gradient() {
        let cfg = toy_config(20);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut store = ParamStore::new();
        let net = NoiseNet::new(&mut store, cfg, &mut rng).unwrap();
        randomize(&mut store, 0.5, &mut rng);
        let x = normal_vec(&mut rng, 4);
        let z = normal_vec(&mut rng, 4);
        let err = check_store(
            &store,
            |st| {
                let mut g = Graph::new(st);
                let c = net.condition(&mut g, [0.3, -1.0, 0.5])?;
                let y = net.forward(&mut g, &x, 7, c)?;
                let t = g.input(Mat::from_vec(4, 1, z.clone())?);
                let d = g.tape.sub(y, t)?;
                let l = g.tape.sum_sqr(d)?;
                Ok((g.tape.scalar(l), g.grads(l)?))
            },
            1e-3,
            &[],
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn initial_loss_is_latent_dim() {
        let cfg = toy_config(20);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<([f64; 3], Vec<f64>)> =
            (0..16).map(|i| ([i as f64, 0.0, 1.0], normal_vec(&mut rng, 4))).collect();
        let train = TrainConfig { steps: 1, batch_size: 2000, lr: 1e-3, final_lr_frac: 1.0, seed: 3 };
        let (_, log) = train_generator(&data, cfg, &train).unwrap();
        assert!((log[0].loss - 4.0).abs() < 0.25, "{}", log[0].loss);
    }

    #[test]
    fn zero_net_sample_mean() {
        let cfg = toy_config(10);
        let (ln, lt) = identity_norms(4);
        let gen = Generator::new(cfg, ln, lt, 1).unwrap();
        let n = 10_000;
        let samples = gen.sample([0.0; 3], n, 4).unwrap();
        // with zero predicted noise the chain is linear and Gaussian:
        // x_{s-1} = x_s/√α_s + √δ̃_s z, starting from unit variance
        let sch = &gen.schedule;
        let mut var = 1.0;
        for s in (1..=sch.n_steps).rev() {
            var = var / sch.alpha(s).unwrap() + if s > 1 { sch.delta_tilde(s).unwrap() } else { 0.0 };
        }
        let se = (var / n as f64).sqrt();
        for c in 0..4 {
            let m = samples.iter().map(|v| v[c]).sum::<f64>() / n as f64;
            assert!(m.abs() < 4.0 * se, "coord {c}: {m}");
        }
        let got = samples.iter().map(|v| v[0] * v[0]).sum::<f64>() / n as f64;
        assert!((got - var).abs() < 0.05 * var, "{got} vs {var}");
    }

    #[test]
    fn sampling_is_deterministic_and_prefix_stable() {
        let cfg = toy_config(10);
        let (ln, lt) = identity_norms(4);
        let mut gen = Generator::new(cfg, ln, lt, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        randomize(&mut gen.store, 0.3, &mut rng);
        let a = gen.sample([1.0, 2.0, 3.0], 2, 77).unwrap();
        let b = gen.sample([1.0, 2.0, 3.0], 2, 77).unwrap();
        assert_eq!(a, b);
        let c = gen.sample([1.0, 2.0, 3.0], 5, 77).unwrap();
        assert_eq!(&c[..2], &a[..]);
        assert_ne!(a[0], a[1]);

        let score = |f: &Vec<f64>| Ok(f[0]);
        let one = generate_representative(&gen, [1.0, 2.0, 3.0], 1, 77, |f| Ok(f.to_vec()), score).unwrap();
        assert_eq!(one.best, a[0]);
        let ten = generate_representative(&gen, [1.0, 2.0, 3.0], 10, 77, |f| Ok(f.to_vec()), score).unwrap();
        assert!(ten.score >= one.score);
        assert_eq!(ten.scores[0], one.score);
        let flat = generate_representative(&gen, [0.0; 3], 4, 1, |f| Ok(f.to_vec()), |_| Ok(1.0)).unwrap();
        assert_eq!(flat.index, 0);
        assert!(generate_representative(&gen, [0.0; 3], 0, 1, |f| Ok(f.to_vec()), score).is_err());
    }

    #[test]
    fn one_step_round_trip() {
        // with the exact injected noise as prediction, the s = 1 reverse
        // step returns F0
        let sch = DiffusionSchedule::linear(1, 0.02, 0.0).unwrap();
        let f0 = [0.3, -0.9, 1.4, 2.0];
        let z = [0.5, 0.5, -1.0, 0.1];
        let f1 = forward_sample(&f0, 1, &z, &sch).unwrap();
        let back = posterior_mean_from_noise(&f1, &z, 1, &sch).unwrap();
        assert!(back.iter().zip(&f0).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn toy_mixture_training() {
        let cfg = GeneratorConfig { width: 8, d_cond: 16, ..toy_config(50) };
        let centres = [[1.0, 2.0, 0.0, -1.0], [3.0, 0.0, 1.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<([f64; 3], Vec<f64>)> = (0..400)
            .map(|i| {
                let c = centres[i % 2];
                (
                    [0.0, 0.0, 0.0],
                    c.iter().map(|m| m + 0.2 * rng.sample::<f64, _>(StandardNormal)).collect(),
                )
            })
            .collect();
        let train = TrainConfig { steps: 3000, batch_size: 16, lr: 3e-3, final_lr_frac: 0.1, seed: 5 };
        let (gen, log) = train_generator(&data, cfg, &train).unwrap();
        let avg = |r: core::ops::Range<usize>| log[r.clone()].iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
        assert!(avg(2800..3000) < 0.8 * avg(0..100), "{} vs {}", avg(2800..3000), avg(0..100));

        let n = 2000;
        let samples = gen.sample([0.0; 3], n, 9).unwrap();
        let moments = |v: &[&[f64]]| {
            let k = v.len() as f64;
            let mean: Vec<f64> = (0..4).map(|c| v.iter().map(|f| f[c]).sum::<f64>() / k).collect();
            let second: Vec<f64> =
                (0..16).map(|e| v.iter().map(|f| f[e / 4] * f[e % 4]).sum::<f64>() / k).collect();
            (mean, second)
        };
        let rel = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
            (d / b.iter().map(|y| y * y).sum::<f64>()).sqrt()
        };
        let (dm, d2) = moments(&data.iter().map(|(_, f)| f.as_slice()).collect::<Vec<_>>());
        let (sm, s2) = moments(&samples.iter().map(|f| f.as_slice()).collect::<Vec<_>>());
        assert!(rel(&sm, &dm) < 0.1, "mean {sm:?} vs {dm:?}");
        assert!(rel(&s2, &d2) < 0.1, "second moment {s2:?} vs {d2:?}");
    }
}
