//! Oracle suites behind `chanrep verify`: water-filling identities and
//! optimality, SVD precoder dominance, finite-difference gradients and the
//! diffusion identities.

use chanrep_core::latentgen::{
    forward_sample, posterior_mean_from_f0, posterior_mean_from_noise, DiffusionSchedule, GeneratorConfig, NoiseNet,
};
use chanrep_core::linalg::CMat;
use chanrep_core::nn::gradcheck::{check_store, randomize, sample_coords};
use chanrep_core::nn::{
    Attention, AttentionDims, Conv1d, CrossAttention, Graph, Init, LayerNorm, Linear, Mat, Mlp, ParamStore, PatchEmbed,
    PatchGrid, TransformerBlock, UNet1d, UNetConfig, Var,
};
use chanrep_core::precode::{
    dual_objective, dual_precoder, se_single, svd_precoder, waterfill, PowerAllocation, PrecoderSpec,
};
use chanrep_core::repr::{contrastive_loss, DecoderConfig, DecoderModel, EncoderConfig, EncoderModel, NegativeQueue};
use chanrep_core::rng::Stream;
use chanrep_core::C64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

pub type WaterfillFn = fn(&[f64], f64) -> chanrep_core::Result<PowerAllocation>;

pub const THEOREM1_TOL: f64 = 1e-9;
pub const GRAD_TOL: f64 = 1e-4;
pub const DIFFUSION_TOL: f64 = 1e-10;
pub const MONTE_CARLO_TOL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub pass: bool,
    pub cases: usize,
    /// Largest observed error in the suite's own unit.
    pub max_error: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn new(suites: Vec<SuiteReport>) -> Self {
        Self { pass: suites.iter().all(|s| s.pass), suites }
    }
}

fn cgauss(rng: &mut Stream) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn random_cmat(rows: usize, cols: usize, rng: &mut Stream) -> CMat {
    CMat::from_fn(rows, cols, |_, _| cgauss(rng))
}

/// Water-filling that keeps one active subcarrier too few: the weakest
/// active one is switched off and the level recomputed over the rest.
pub fn waterfill_off_by_one(gains: &[f64], budget: f64) -> chanrep_core::Result<PowerAllocation> {
    let good = waterfill(gains, budget)?;
    let mut active: Vec<usize> = (0..gains.len()).filter(|&i| good.power[i] > 0.0).collect();
    if active.len() < 2 {
        return Ok(good);
    }
    active.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
    active.pop();
    let floors: f64 = active.iter().map(|&i| 1.0 / gains[i]).sum();
    let level = (budget + floors) / active.len() as f64;
    let mut power = vec![0.0; gains.len()];
    for &i in &active {
        power[i] = (level - 1.0 / gains[i]).max(0.0);
    }
    Ok(PowerAllocation { power, water_level: level, degenerate: false })
}

/// Joint SE of the water-filled dual precoders against the closed-form
/// objective, on random `(H1, H2, σ²)` with `N_R ≤ 4`, `N_T ≤ 8`, `N_k ≤ 8`.
pub fn theorem1(n: usize, rng: &mut Stream, wf: WaterfillFn) -> chanrep_core::Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let nr = rng.random_range(1..=4);
        let nt = rng.random_range(1..=8);
        let nk = rng.random_range(1..=8);
        let noise: f64 = rng.random_range(0.1..2.0);
        let hs: Vec<CMat> = (0..nk).map(|_| random_cmat(nr, 2 * nt, rng)).collect();
        let gains: Vec<f64> = hs
            .iter()
            .map(|h| Ok(h.spectral_norm()?.powi(2) / noise))
            .collect::<chanrep_core::Result<_>>()?;
        let alloc = wf(&gains, 2.0 * nk as f64)?;
        let mut achieved = 0.0;
        for (h, &p) in hs.iter().zip(&alloc.power) {
            let w = dual_precoder(h, p)?;
            achieved += (h.matmul(&w.data)?.frobenius_sqr() / noise).ln_1p() / std::f64::consts::LN_2;
        }
        let objective = dual_objective(&gains, &alloc.power);
        worst = worst.max((achieved - objective).abs() / objective.abs().max(1e-300));
    }
    Ok(SuiteReport {
        name: "theorem1".into(),
        pass: worst < THEOREM1_TOL,
        cases: n,
        max_error: worst,
        detail: "relative gap between achieved joint SE and the water-filling objective".into(),
    })
}

/// Every point of a `step`-spaced simplex grid over `N_k ≤ 3` subcarriers.
fn simplex_grid(nk: usize, steps: usize, mut f: impl FnMut(&[f64])) {
    let mut frac = vec![0.0; nk];
    fn rec(i: usize, left: usize, steps: usize, frac: &mut Vec<f64>, f: &mut dyn FnMut(&[f64])) {
        if i + 1 == frac.len() {
            frac[i] = left as f64 / steps as f64;
            f(frac);
            return;
        }
        for k in 0..=left {
            frac[i] = k as f64 / steps as f64;
            rec(i + 1, left - k, steps, frac, f);
        }
    }
    rec(0, steps, steps, &mut frac, &mut f);
}

/// Water-filling objective against a `1e-2` simplex grid plus a KKT check.
pub fn waterfill_grid(n: usize, rng: &mut Stream, wf: WaterfillFn) -> chanrep_core::Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    let mut kkt: f64 = 0.0;
    for _ in 0..n {
        let nk = rng.random_range(1..=3);
        let gains: Vec<f64> = (0..nk).map(|_| 10f64.powf(rng.random_range(-1.5..1.5))).collect();
        let budget: f64 = rng.random_range(0.1..6.0);
        let alloc = wf(&gains, budget)?;
        let best = dual_objective(&gains, &alloc.power);
        simplex_grid(nk, 100, |frac| {
            let p: Vec<f64> = frac.iter().map(|x| x * budget).collect();
            worst = worst.max(dual_objective(&gains, &p) - best);
        });
        let mu = alloc.water_level;
        for (c, p) in gains.iter().zip(&alloc.power) {
            let v = if *p > 0.0 { (p + 1.0 / c - mu).abs() } else { (mu - 1.0 / c).max(0.0) };
            kkt = kkt.max(v / mu.abs().max(1e-300));
        }
        kkt = kkt.max((alloc.power.iter().sum::<f64>() - budget).abs() / budget);
    }
    Ok(SuiteReport {
        name: "waterfill".into(),
        pass: worst <= 1e-12 && kkt < 1e-9,
        cases: n,
        max_error: worst.max(kkt),
        detail: format!("largest grid excess {worst:.3e} bits, KKT residual {kkt:.3e}"),
    })
}

/// SE of the SVD precoder against `m` random unit-norm precoders per channel.
pub fn svd_dominance(n: usize, m: usize, rng: &mut Stream) -> chanrep_core::Result<SuiteReport> {
    let mut violations = 0usize;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let nr = rng.random_range(1..=4);
        let nt = rng.random_range(2..=8);
        let noise: f64 = rng.random_range(0.1..2.0);
        let h = random_cmat(nr, nt, rng);
        let w = svd_precoder(&h, &PrecoderSpec::new(1, noise)?)?;
        let best = se_single(&h, &w.data, noise)?;
        for _ in 0..m {
            let v = random_cmat(nt, 1, rng);
            let v = v.scale(C64::new(1.0 / v.frobenius(), 0.0));
            let se = se_single(&h, &v, noise)?;
            if se > best + 1e-12 {
                violations += 1;
            }
            worst = worst.max(se - best);
        }
    }
    Ok(SuiteReport {
        name: "svd_dominance".into(),
        pass: violations == 0,
        cases: n * m,
        max_error: worst.max(0.0),
        detail: format!("{violations} random precoders beat the SVD precoder"),
    })
}

/// Finite-difference check of one model: the loss is `Σ y ⊙ R` for a fixed
/// random `R`, so every output element contributes.
fn grad_case<F>(name: &str, mut store: ParamStore, forward: F, rng: &mut Stream, max_coords: usize) -> chanrep_core::Result<(String, f64)>
where
    F: Fn(&mut Graph<'_>) -> chanrep_core::Result<Var>,
{
    randomize(&mut store, 0.5, rng);
    let probe = {
        let mut g = Graph::new(&store);
        let y = forward(&mut g)?;
        g.tape.shape(y)
    };
    let weights = Mat::from_fn(probe.0, probe.1, |_, _| rng.random_range(-1.0..1.0));
    let coords = if store.numel() > max_coords { sample_coords(store.numel(), max_coords, rng) } else { Vec::new() };
    let err = check_store(
        &store,
        |s| {
            let mut g = Graph::new(s);
            let y = forward(&mut g)?;
            let w = g.input(weights.clone());
            let p = g.tape.mul(y, w)?;
            let l = g.tape.sum(p);
            Ok((g.tape.scalar(l), g.grads(l)?))
        },
        1e-5,
        &coords,
    )?;
    Ok((name.to_string(), err))
}

fn rand_mat(rows: usize, cols: usize, rng: &mut Stream) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Central-difference checks of every trainable layer and the three full
/// models. Returns per-case errors alongside the suite summary.
pub fn gradients(rng: &mut Stream) -> chanrep_core::Result<(SuiteReport, Vec<(String, f64)>)> {
    let mut cases = Vec::new();
    let x = rand_mat(3, 4, rng);

    let mut s = ParamStore::new();
    let lin = Linear::new(&mut s, "lin", 4, 3, true, Init::FanIn, rng);
    cases.push(grad_case("linear", s, |g| { let xi = g.input(x.clone()); lin.forward(g, xi) }, rng, 400)?);

    let mut s = ParamStore::new();
    let ln = LayerNorm::new(&mut s, "ln", 4);
    cases.push(grad_case("layer_norm", s, |g| { let xi = g.input(x.clone()); ln.forward(g, xi) }, rng, 400)?);

    let mut s = ParamStore::new();
    let mlp = Mlp::new(&mut s, "mlp", 4, 6, 2, Init::FanIn, rng);
    cases.push(grad_case("mlp", s, |g| { let xi = g.input(x.clone()); mlp.forward(g, xi) }, rng, 400)?);

    let mut s = ParamStore::new();
    let dims = AttentionDims { d_query_in: 4, d_context_in: 5, d_model: 4, n_heads: 2, d_out: 3 };
    let att = Attention::new(&mut s, "att", dims, Init::FanIn, rng)?;
    let ctx = rand_mat(2, 5, rng);
    cases.push(grad_case(
        "attention",
        s,
        |g| {
            let xi = g.input(x.clone());
            let ci = g.input(ctx.clone());
            att.forward(g, xi, ci)
        },
        rng,
        400,
    )?);

    let mut s = ParamStore::new();
    let block = TransformerBlock::new(&mut s, "blk", 4, 2, 2, rng)?;
    cases.push(grad_case("transformer_block", s, |g| { let xi = g.input(x.clone()); block.forward(g, xi) }, rng, 400)?);

    let mut s = ParamStore::new();
    let xa = CrossAttention::new(&mut s, "xa", 4, 6, 2, rng)?;
    let (cond, time) = (rand_mat(1, 6, rng), rand_mat(1, 6, rng));
    cases.push(grad_case(
        "cross_attention",
        s,
        |g| {
            let xi = g.input(x.clone());
            let c = g.input(cond.clone());
            let t = g.input(time.clone());
            xa.forward(g, xi, c, t)
        },
        rng,
        400,
    )?);

    let mut s = ParamStore::new();
    let conv = Conv1d::new(&mut s, "conv", 4, 3, 3, Init::FanIn, rng);
    cases.push(grad_case("conv1d", s, |g| { let xi = g.input(x.clone()); conv.forward(g, xi) }, rng, 400)?);

    let mut s = ParamStore::new();
    let grid = PatchGrid::new(2, 4, 4, 2)?;
    let pe = PatchEmbed::new(&mut s, "pe", grid, 6, rng)?;
    let image: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    cases.push(grad_case("patch_embed", s, |g| pe.forward(g, &image), rng, 400)?);

    let mut s = ParamStore::new();
    let ucfg = UNetConfig { len: 8, width: 2, d_cond: 4, n_heads: 2, kernel: 3 };
    let unet = UNet1d::new(&mut s, "unet", ucfg, rng)?;
    let sig = rand_mat(8, 1, rng);
    let (c4, t4) = (rand_mat(1, 4, rng), rand_mat(1, 4, rng));
    cases.push(grad_case(
        "unet1d",
        s,
        |g| {
            let xi = g.input(sig.clone());
            let c = g.input(c4.clone());
            let t = g.input(t4.clone());
            unet.forward(g, xi, c, t)
        },
        rng,
        300,
    )?);

    let ecfg = EncoderConfig { height: 4, width: 4, patch: 2, d_model: 8, n_heads: 2, depth: 1, mlp_ratio: 2, n_re: 4 };
    let enc = EncoderModel::new(ecfg, 3)?;
    let images: Vec<Vec<f64>> = (0..2).map(|_| (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let keys = Mat::from_fn(2, 4, |r, c| if c == r { 1.0 } else { 0.0 });
    let mut queue = NegativeQueue::new(3, 4)?;
    for _ in 0..3 {
        let k: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        queue.push(&k)?;
    }
    let mut estore = enc.store.clone();
    randomize(&mut estore, 0.5, rng);
    let refs: Vec<&[f64]> = images.iter().map(|v| v.as_slice()).collect();
    let coords = sample_coords(estore.numel(), 300, rng);
    let err = check_store(
        &estore,
        |st| {
            let m = EncoderModel { store: st.clone(), ..enc.clone() };
            let mut g = Graph::new(&m.store);
            let l = contrastive_loss(&m, &mut g, &refs, &keys, &queue, 0.5)?;
            Ok((g.tape.scalar(l), g.grads(l)?))
        },
        1e-5,
        &coords,
    )?;
    cases.push(("encoder_infonce".into(), err));

    let dcfg = DecoderConfig { n_re: 8, height: 4, width: 4, d_model: 8, n_heads: 2, depth: 1, mlp_ratio: 2 };
    let dec = DecoderModel::new(dcfg, 4)?;
    let f: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    cases.push(grad_case("decoder", dec.store.clone(), |g| dec.decoder.forward(g, &f), rng, 300)?);

    let gcfg = GeneratorConfig { n_re: 8, width: 2, d_cond: 4, n_heads: 2, kernel: 3, n_steps: 10, intercept: 1e-4, slope: 1e-3 };
    let mut s = ParamStore::new();
    let net = NoiseNet::new(&mut s, gcfg, rng)?;
    let lat: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    cases.push(grad_case(
        "noise_net",
        s,
        |g| {
            let c = net.condition(g, [0.3, -0.2, 1.0])?;
            net.forward(g, &lat, 4, c)
        },
        rng,
        300,
    )?);

    let worst = cases.iter().map(|c| c.1).fold(0.0, f64::max);
    let failing: Vec<&str> = cases.iter().filter(|c| !(c.1 < GRAD_TOL)).map(|c| c.0.as_str()).collect();
    let report = SuiteReport {
        name: "gradients".into(),
        pass: failing.is_empty(),
        cases: cases.len(),
        max_error: worst,
        detail: if failing.is_empty() { "all layers and models".into() } else { format!("failing: {}", failing.join(", ")) },
    };
    Ok((report, cases))
}

/// Schedule identities, two-form posterior agreement and the Monte-Carlo
/// forward marginal with `draws` samples.
pub fn diffusion(draws: usize, rng: &mut Stream) -> chanrep_core::Result<SuiteReport> {
    let sch = DiffusionSchedule::reference();
    let mut ident: f64 = 0.0;
    let mut prod = 1.0;
    for s in 1..=sch.n_steps {
        let d = sch.delta(s)?;
        prod *= 1.0 - d;
        let ab = sch.alpha_bar(s)?;
        ident = ident.max((ab - prod).abs() / prod);
        let dt = (1.0 - sch.alpha_bar(s - 1)?) / (1.0 - ab) * d;
        ident = ident.max((sch.delta_tilde(s)? - dt).abs() / dt.max(1e-300));
    }
    let mut posterior: f64 = 0.0;
    for _ in 0..200 {
        let s = rng.random_range(1..=sch.n_steps);
        let dim = rng.random_range(1..=16);
        let f0: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let fs = forward_sample(&f0, s, &z, &sch)?;
        let a = posterior_mean_from_f0(&fs, &f0, s, &sch)?;
        let b = posterior_mean_from_noise(&fs, &z, s, &sch)?;
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        posterior = posterior.max(diff / scale);
    }
    let f0 = [0.8, -1.2, 2.0, 0.1, -0.4, 1.5, 0.0, -2.2];
    let norm2: f64 = f0.iter().map(|x| x * x).sum();
    let mut mc: f64 = 0.0;
    for s in [1, 150, 300, 600] {
        let mut acc = 0.0;
        for _ in 0..draws {
            let z: Vec<f64> = (0..f0.len()).map(|_| rng.sample(StandardNormal)).collect();
            acc += forward_sample(&f0, s, &z, &sch)?.iter().map(|x| x * x).sum::<f64>();
        }
        let ab = sch.alpha_bar(s)?;
        let expect = ab * norm2 + (1.0 - ab) * f0.len() as f64;
        mc = mc.max((acc / draws as f64 - expect).abs() / expect);
    }
    Ok(SuiteReport {
        name: "diffusion".into(),
        pass: ident < DIFFUSION_TOL && posterior < DIFFUSION_TOL && mc < MONTE_CARLO_TOL,
        cases: sch.n_steps + 200 + 4,
        max_error: ident.max(posterior).max(mc),
        detail: format!("schedule {ident:.2e}, posterior forms {posterior:.2e}, forward marginal {mc:.2e} (relative)"),
    })
}

/// All suites with the given water-filling routine.
pub fn run_all(seed: u64, wf: WaterfillFn) -> chanrep_core::Result<VerifyReport> {
    use chanrep_core::rng::stream;
    let suites = vec![
        theorem1(200, &mut stream(seed, 100, &[1]), wf)?,
        waterfill_grid(100, &mut stream(seed, 100, &[2]), wf)?,
        svd_dominance(100, 1000, &mut stream(seed, 100, &[3]))?,
        gradients(&mut stream(seed, 100, &[4]))?.0,
        diffusion(100_000, &mut stream(seed, 100, &[5]))?,
    ];
    Ok(VerifyReport::new(suites))
}

/// Run every suite, write the report to the output directory and fail with
/// a verification error if any suite fails.
pub fn run_verify(seed: u64, layout: &crate::pipeline::Layout, wf: WaterfillFn) -> crate::Result<VerifyReport> {
    let report = run_all(seed, wf)?;
    crate::error::write_json(&layout.verify(), &report)?;
    if !report.pass {
        let failed: Vec<&str> = report.suites.iter().filter(|s| !s.pass).map(|s| s.name.as_str()).collect();
        return Err(crate::HarnessError::Verification(format!("failing suites: {}", failed.join(", "))));
    }
    Ok(report)
}
