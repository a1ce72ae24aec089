//! Per-UE comparison of representative-channel methods and its CSV exports.

use std::collections::BTreeMap;

use chanrep_core::chanmodel::{Dataset, DatasetEntry};
use chanrep_core::latentgen::Generator;
use chanrep_core::linalg::CMat;
use chanrep_core::precode::{representative_traversal, score, stack_dual, Target, TaskKind};
use chanrep_core::repr::{mean_representation, DecoderModel, ImageCodec, Representation};
use chanrep_core::rng::{domain, stream};
use rand::RngCore;
use serde::Serialize;

use crate::config::{ExperimentConfig, Method};
use crate::error::{write, write_json, HarnessError, Result};
use crate::formats::lat1::{self, LatentBlock, LatentMeta};
use crate::pipeline::{self, image_to_channel, Layout};

/// A task a representative is scored on, named as in the CSV exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Metric {
    pub task: TaskKind,
}

impl Metric {
    pub fn name(&self) -> String {
        match self.task {
            TaskKind::Single { n_layers } => format!("task1_{n_layers}"),
            TaskKind::Dual => "task2".into(),
        }
    }
}

pub fn metrics(cfg: &ExperimentConfig, n_bs: usize) -> Vec<Metric> {
    let mut out: Vec<Metric> = cfg.eval.n_layers.iter().map(|&n| Metric { task: TaskKind::Single { n_layers: n } }).collect();
    if cfg.eval.dual && n_bs == 2 {
        out.push(Metric { task: TaskKind::Dual });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub ue_id: u32,
    pub method: &'static str,
    pub metric: String,
    pub value: f64,
}

/// Models the requested methods need.
pub struct Models<'a> {
    pub reps: &'a [Representation],
    pub decoder: Option<&'a DecoderModel>,
    pub generator: Option<&'a Generator>,
}

/// Decoded candidates of one link plus the latents they came from.
struct LinkCandidates {
    mean: Option<Vec<CMat>>,
    generated: Vec<Vec<CMat>>,
    latents: Vec<Vec<f64>>,
}

/// Seed of the per-link sample streams.
pub fn link_seed(seed: u64, bs_id: u32, ue_id: u32) -> u64 {
    stream(seed, domain::SAMPLE, &[bs_id as u64, ue_id as u64]).next_u64()
}

fn first_max(scores: &[f64]) -> f64 {
    scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn link_candidates(
    entry: &DatasetEntry,
    reps: &[&[f64]],
    models: &Models<'_>,
    codec: &ImageCodec,
    want_mean: bool,
    n_gen: usize,
    seed: u64,
) -> Result<LinkCandidates> {
    let decode = |f: &[f64]| -> Result<Vec<CMat>> {
        let dec = models.decoder.expect("checked by caller");
        image_to_channel(codec, &dec.decode(f)?)
    };
    let mean = if want_mean { Some(decode(&mean_representation(reps)?)?) } else { None };
    let (mut generated, mut latents) = (Vec::new(), Vec::new());
    if n_gen > 0 {
        let gen = models.generator.expect("checked by caller");
        latents = gen.sample(entry.tensor.loc, n_gen, link_seed(seed, entry.bs_id, entry.ue_id))?;
        generated = latents.iter().map(|f| decode(f)).collect::<Result<_>>()?;
    }
    Ok(LinkCandidates { mean, generated, latents })
}

fn method_values(
    methods: &[Method],
    n_gen: usize,
    traversal: impl Fn() -> Result<f64>,
    mean: impl Fn() -> Result<f64>,
    generated: impl Fn(usize) -> Result<f64>,
) -> Result<Vec<(Method, f64)>> {
    let scores: Vec<f64> = if methods.iter().any(|m| m.needs_generator()) {
        let n = if methods.contains(&Method::Generated10) { n_gen } else { 1 };
        (0..n).map(&generated).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    methods
        .iter()
        .map(|&m| {
            let v = match m {
                Method::OriginalTraversal => traversal()?,
                Method::MeanRepresentation => mean()?,
                Method::Generated1 => scores[0],
                Method::Generated10 => first_max(&scores),
            };
            Ok((m, v))
        })
        .collect()
}

/// Evaluation output: one row per `(ue, method, metric)` plus the latents
/// drawn for each link.
pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    pub latents: Vec<Vec<f64>>,
    pub meta: LatentMeta,
}

/// Score every configured method on every UE. Single-BS metrics of a UE
/// average over its links; the dual metric needs exactly two BSs.
pub fn evaluate(cfg: &ExperimentConfig, ds: &Dataset, models: &Models<'_>, seed: u64) -> Result<Evaluation> {
    let methods = &cfg.eval.methods;
    if methods.iter().any(|m| m.needs_decoder()) && models.decoder.is_none() {
        return Err(HarnessError::Config("methods need a decoder".into()));
    }
    let uses_gen = methods.iter().any(|m| m.needs_generator());
    if uses_gen && models.generator.is_none() {
        return Err(HarnessError::Config("methods need a generator".into()));
    }
    let n_gen = match (uses_gen, methods.contains(&Method::Generated10)) {
        (false, _) => 0,
        (true, true) => cfg.eval.n_gen,
        (true, false) => 1,
    };
    let codec = pipeline::codec(ds)?;
    let nt = ds.scene.n_times;
    let noise = ds.scene.noise_var;
    let bs_ids = ds.bs_ids();
    let metrics = metrics(cfg, bs_ids.len());
    let mut rows = Vec::new();
    let mut latents = Vec::new();
    let mut blocks = Vec::new();

    for ue in ds.ue_ids() {
        let mut links = Vec::new();
        for &bs in &bs_ids {
            let idx = ds
                .entries
                .iter()
                .position(|e| e.bs_id == bs && e.ue_id == ue)
                .ok_or_else(|| HarnessError::Config(format!("UE {ue} has no link to BS {bs}")))?;
            let entry = &ds.entries[idx];
            let reps: Vec<&[f64]> =
                models.reps.get(idx * nt..(idx + 1) * nt).unwrap_or_default().iter().map(|r| r.f.as_slice()).collect();
            let want_mean = methods.contains(&Method::MeanRepresentation);
            let cands = link_candidates(entry, &reps, models, &codec, want_mean, n_gen, seed)?;
            if n_gen > 0 {
                blocks.push(LatentBlock { bs_id: bs, ue_id: ue, loc: entry.tensor.loc });
                latents.extend(cands.latents.iter().cloned());
            }
            links.push((entry, cands));
        }
        for metric in &metrics {
            let per_method: Vec<(Method, f64)> = match metric.task {
                TaskKind::Single { .. } => {
                    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
                    for (entry, c) in &links {
                        let target = Target::Single(&entry.tensor);
                        let vals = method_values(
                            methods,
                            n_gen,
                            || Ok(representative_traversal(target, metric.task, noise)?.score),
                            || Ok(score(target, c.mean.as_ref().expect("decoder present"), metric.task, noise)?),
                            |i| Ok(score(target, &c.generated[i], metric.task, noise)?),
                        )?;
                        for (i, (_, v)) in vals.iter().enumerate() {
                            *acc.entry(i).or_default() += v / links.len() as f64;
                        }
                    }
                    methods.iter().zip(acc.values()).map(|(m, v)| (*m, *v)).collect()
                }
                TaskKind::Dual => {
                    let ((e1, c1), (e2, c2)) = (&links[0], &links[1]);
                    let target = Target::Dual(&e1.tensor, &e2.tensor);
                    let stack = |a: &[CMat], b: &[CMat]| -> Result<Vec<CMat>> {
                        Ok(a.iter().zip(b).map(|(x, y)| stack_dual(x, y)).collect::<chanrep_core::Result<_>>()?)
                    };
                    method_values(
                        methods,
                        n_gen,
                        || Ok(representative_traversal(target, metric.task, noise)?.score),
                        || {
                            let rep = stack(c1.mean.as_ref().expect("decoder present"), c2.mean.as_ref().expect("decoder present"))?;
                            Ok(score(target, &rep, metric.task, noise)?)
                        },
                        |i| Ok(score(target, &stack(&c1.generated[i], &c2.generated[i])?, metric.task, noise)?),
                    )?
                }
            };
            for (m, v) in per_method {
                rows.push(EvalRow { ue_id: ue, method: m.label(), metric: metric.name(), value: v });
            }
        }
    }
    Ok(Evaluation { rows, latents, meta: LatentMeta { seed, n_gen, blocks } })
}

/// `ue_id,method,metric,value`.
pub fn render_eval(rows: &[EvalRow]) -> String {
    let mut out = String::from("ue_id,method,metric,value\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.ue_id, r.method, r.metric, r.value));
    }
    out
}

/// Rows grouped by `(method, metric)` in first-seen order.
fn groups(rows: &[EvalRow]) -> Vec<((&'static str, String), Vec<&EvalRow>)> {
    let mut out: Vec<((&'static str, String), Vec<&EvalRow>)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(k, _)| k.0 == r.method && k.1 == r.metric) {
            Some((_, v)) => v.push(r),
            None => out.push(((r.method, r.metric.clone()), vec![r])),
        }
    }
    out
}

/// Empirical CDF per `(method, metric)`: `method,metric,value,cdf`.
pub fn render_cdf(rows: &[EvalRow]) -> String {
    let mut out = String::from("method,metric,value,cdf\n");
    for ((method, metric), group) in groups(rows) {
        let mut vals: Vec<f64> = group.iter().map(|r| r.value).collect();
        vals.sort_by(f64::total_cmp);
        let n = vals.len() as f64;
        for (i, v) in vals.iter().enumerate() {
            out.push_str(&format!("{method},{metric},{v},{}\n", (i + 1) as f64 / n));
        }
    }
    out
}

/// Centred moving average; the window shrinks at the ends.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Per-UE values in UE order with their moving average:
/// `method,metric,ue_id,value,smoothed`.
pub fn render_line(rows: &[EvalRow], window: usize) -> String {
    let mut out = String::from("method,metric,ue_id,value,smoothed\n");
    for ((method, metric), mut group) in groups(rows) {
        group.sort_by_key(|r| r.ue_id);
        let vals: Vec<f64> = group.iter().map(|r| r.value).collect();
        for (r, s) in group.iter().zip(moving_average(&vals, window)) {
            out.push_str(&format!("{method},{metric},{},{},{s}\n", r.ue_id, r.value));
        }
    }
    out
}

/// Mean value per method and metric.
pub fn means(rows: &[EvalRow]) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for ((method, metric), group) in groups(rows) {
        let m = group.iter().map(|r| r.value).sum::<f64>() / group.len() as f64;
        out.entry(method.to_string()).or_default().insert(metric, m);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub seed: u64,
    pub n_ue: usize,
    pub means: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Load what the configured methods need, evaluate, and write every export.
pub fn run_eval(cfg: &ExperimentConfig, layout: &Layout) -> Result<EvalSummary> {
    let ds = pipeline::load_dataset(cfg, layout)?;
    let methods = &cfg.eval.methods;
    let needs_reps = methods.iter().any(|m| *m != Method::OriginalTraversal);
    let reps = if needs_reps { pipeline::representations(cfg, layout, &ds)? } else { Vec::new() };
    let decoder = if methods.iter().any(|m| m.needs_decoder()) { Some(pipeline::load_decoder(cfg, layout)?) } else { None };
    let generator =
        if methods.iter().any(|m| m.needs_generator()) { Some(pipeline::load_generator(cfg, layout)?) } else { None };
    let models = Models { reps: &reps, decoder: decoder.as_ref(), generator: generator.as_ref() };
    let ev = evaluate(cfg, &ds, &models, cfg.seed)?;
    write(&layout.eval(), render_eval(&ev.rows).as_bytes())?;
    write(&layout.cdf(), render_cdf(&ev.rows).as_bytes())?;
    write(&layout.line(), render_line(&ev.rows, cfg.eval.window).as_bytes())?;
    if !ev.latents.is_empty() {
        lat1::save(&layout.latents(), &ev.latents, &ev.meta)?;
    }
    let summary = EvalSummary { seed: cfg.seed, n_ue: ds.ue_ids().len(), means: means(&ev.rows) };
    write_json(&layout.summary(), &summary)?;
    Ok(summary)
}
