//! Artifact layout and the gen/train stages. Every stage reads its inputs
//! from the output directory, so stages can run in separate processes.
//! Models are always reloaded from their `f32` checkpoints before use.

use std::path::{Path, PathBuf};

use chanrep_core::chanmodel::Dataset;
use chanrep_core::latentgen::{train_generator, Generator, LatentNorm, LocNorm};
use chanrep_core::linalg::CMat;
use chanrep_core::precode::nmse;
use chanrep_core::repr::{
    dataset_images, encode_dataset, separation, train_decoder, train_encoder, DecoderModel, EncoderModel, ImageCodec,
    Representation, Separation,
};
use chanrep_core::C64;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{write, HarnessError, Result};
use crate::formats::{checkpoint, crt1, raypath, trainlog};

/// File names inside an output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn dataset(&self) -> PathBuf {
        self.file("dataset.crt1")
    }
    pub fn encoder(&self) -> PathBuf {
        self.file("encoder")
    }
    pub fn encoder_log(&self) -> PathBuf {
        self.file("encoder_log.jsonl")
    }
    pub fn decoder(&self) -> PathBuf {
        self.file("decoder")
    }
    pub fn decoder_log(&self) -> PathBuf {
        self.file("decoder_log.jsonl")
    }
    pub fn generator(&self) -> PathBuf {
        self.file("generator")
    }
    pub fn generator_log(&self) -> PathBuf {
        self.file("generator_log.jsonl")
    }
    pub fn nmse(&self) -> PathBuf {
        self.file("nmse.csv")
    }
    pub fn eval(&self) -> PathBuf {
        self.file("eval.csv")
    }
    pub fn cdf(&self) -> PathBuf {
        self.file("cdf.csv")
    }
    pub fn line(&self) -> PathBuf {
        self.file("line.csv")
    }
    pub fn summary(&self) -> PathBuf {
        self.file("summary.json")
    }
    pub fn latents(&self) -> PathBuf {
        self.file("generated.lat1")
    }
    pub fn project2d(&self) -> PathBuf {
        self.file("project2d.csv")
    }
    pub fn verify(&self) -> PathBuf {
        self.file("verify.json")
    }
}

/// Synthesise the configured scene, or import it from the ray-path CSV.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let scene = cfg.scene_config()?;
    match &cfg.scene.import_csv {
        Some(path) => raypath::to_dataset(&raypath::import(path)?, scene, path),
        None => {
            let draws = cfg.sampler().sample_scene(&scene, cfg.scene.n_locations, cfg.scene.n_bs)?;
            Ok(Dataset::from_draws(&draws, scene)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenReport {
    pub entries: usize,
    pub shape: [usize; 4],
    pub norm_scale: f64,
}

pub fn run_gen(cfg: &ExperimentConfig, layout: &Layout) -> Result<GenReport> {
    let ds = build_dataset(cfg)?;
    let source = cfg.scene.import_csv.as_ref().map_or("synthetic".to_string(), |p| p.display().to_string());
    crt1::save(&layout.dataset(), &ds, &source, cfg.seed)?;
    Ok(GenReport { entries: ds.entries.len(), shape: ds.scene.tensor_shape(), norm_scale: ds.norm_scale })
}

/// Load the dataset and check it fits the configured networks.
pub fn load_dataset(cfg: &ExperimentConfig, layout: &Layout) -> Result<Dataset> {
    let ds = crt1::load(&layout.dataset())?;
    let [_, nk, nr, ntx] = ds.scene.tensor_shape();
    if (nk, nr * ntx) != cfg.codec_dims() {
        return Err(HarnessError::Config(format!(
            "dataset {} has {}x{} channel images, config expects {}x{}; rerun gen",
            layout.dataset().display(),
            nk,
            nr * ntx,
            cfg.codec_dims().0,
            cfg.codec_dims().1
        )));
    }
    Ok(ds)
}

pub fn codec(ds: &Dataset) -> Result<ImageCodec> {
    Ok(ImageCodec::for_dataset(ds)?)
}

fn missing(path: &Path, what: &str) -> HarnessError {
    HarnessError::MissingArtifact { path: path.to_path_buf(), reason: format!("{what}; run the earlier stage first") }
}

fn require(stem: &Path, what: &str) -> Result<()> {
    let (bin, json) = checkpoint::paths(stem);
    for p in [bin, json] {
        if !p.exists() {
            return Err(missing(&p, what));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderReport {
    pub retrieval_top1: f64,
    pub mean_positive_cos: f64,
    pub mean_negative_cos: f64,
    pub final_loss: f64,
}

impl EncoderReport {
    fn new(sep: Separation, final_loss: f64) -> Self {
        Self {
            retrieval_top1: sep.retrieval_top1,
            mean_positive_cos: sep.mean_positive_cos,
            mean_negative_cos: sep.mean_negative_cos,
            final_loss,
        }
    }
}

fn tail_loss(log: &[chanrep_core::repr::StepRecord]) -> f64 {
    let n = log.len().min(50);
    if n == 0 {
        return f64::NAN;
    }
    log[log.len() - n..].iter().map(|r| r.loss).sum::<f64>() / n as f64
}

pub fn train_encoder_stage(cfg: &ExperimentConfig, layout: &Layout) -> Result<EncoderReport> {
    let ds = load_dataset(cfg, layout)?;
    let images = dataset_images(&ds, &codec(&ds)?)?;
    let (model, log) = train_encoder(&images, cfg.encoder_config(), &cfg.contrastive_config())?;
    checkpoint::save(&layout.encoder(), &model.store, json!({ "stage": "encoder", "seed": cfg.seed, "encoder": cfg.encoder }))?;
    let model = load_encoder(cfg, layout)?;
    let report = EncoderReport::new(separation(&encode_dataset(&ds, &model)?)?, tail_loss(&log));
    trainlog::save(&layout.encoder_log(), &log, Some(serde_json::to_value(report).expect("plain struct")))?;
    Ok(report)
}

pub fn load_encoder(cfg: &ExperimentConfig, layout: &Layout) -> Result<EncoderModel> {
    require(&layout.encoder(), "encoder checkpoint")?;
    let mut model = EncoderModel::new(cfg.encoder_config(), cfg.seed)?;
    checkpoint::load_into(&layout.encoder(), &mut model.store)?;
    Ok(model)
}

/// Encoder outputs for every `(entry, t)`, entry-major.
pub fn representations(cfg: &ExperimentConfig, layout: &Layout, ds: &Dataset) -> Result<Vec<Representation>> {
    Ok(encode_dataset(ds, &load_encoder(cfg, layout)?)?)
}

/// Decoded image as one `N_R x N_T` matrix per subcarrier.
pub fn image_to_channel(codec: &ImageCodec, image: &[f64]) -> Result<Vec<CMat>> {
    let flat = codec.to_channel(image)?;
    let (nr, nt) = (codec.n_r, codec.n_t);
    Ok((0..codec.n_k).map(|k| CMat::from_fn(nr, nt, |r, c| flat[(k * nr + r) * nt + c])).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderReport {
    pub nmse_db: f64,
    pub final_loss: f64,
}

/// Training-set NMSE of `decoder` over every `(entry, t)`.
pub fn training_nmse(ds: &Dataset, reps: &[Representation], decoder: &DecoderModel) -> Result<f64> {
    let codec = codec(ds)?;
    let mut recon = ds.clone();
    let mut it = reps.iter();
    for e in &mut recon.entries {
        let n = e.tensor.data().len() / e.tensor.n_times();
        for t in 0..e.tensor.n_times() {
            let r = it.next().ok_or_else(|| HarnessError::Config("fewer representations than channels".into()))?;
            let ch: Vec<C64> = codec.to_channel(&decoder.decode(&r.f)?)?;
            e.tensor.data_mut()[t * n..(t + 1) * n].copy_from_slice(&ch);
        }
    }
    let a: Vec<_> = ds.entries.iter().map(|e| &e.tensor).collect();
    let b: Vec<_> = recon.entries.iter().map(|e| &e.tensor).collect();
    Ok(nmse(&a, &b)?)
}

pub fn train_decoder_stage(cfg: &ExperimentConfig, layout: &Layout) -> Result<DecoderReport> {
    let ds = load_dataset(cfg, layout)?;
    let reps = representations(cfg, layout, &ds)?;
    let images = dataset_images(&ds, &codec(&ds)?)?;
    let nt = ds.scene.n_times;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> =
        reps.iter().enumerate().map(|(i, r)| (r.f.clone(), images[i / nt][i % nt].clone())).collect();
    let (model, log) = train_decoder(&pairs, cfg.decoder_config(), &cfg.decoder_train())?;
    checkpoint::save(&layout.decoder(), &model.store, json!({ "stage": "decoder", "seed": cfg.seed, "decoder": cfg.decoder }))?;
    let model = load_decoder(cfg, layout)?;
    let report = DecoderReport { nmse_db: training_nmse(&ds, &reps, &model)?, final_loss: tail_loss(&log) };
    trainlog::save(&layout.decoder_log(), &log, Some(serde_json::to_value(report).expect("plain struct")))?;
    write(&layout.nmse(), format!("model,nmse_db\ndecoder,{}\n", report.nmse_db).as_bytes())?;
    Ok(report)
}

pub fn load_decoder(cfg: &ExperimentConfig, layout: &Layout) -> Result<DecoderModel> {
    require(&layout.decoder(), "decoder checkpoint")?;
    let mut model = DecoderModel::new(cfg.decoder_config(), cfg.seed)?;
    checkpoint::load_into(&layout.decoder(), &mut model.store)?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GeneratorMeta {
    stage: String,
    seed: u64,
    loc_mean: [f64; 3],
    loc_std: [f64; 3],
    latent_mean: Vec<f64>,
    latent_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub final_loss: f64,
}

pub fn train_generator_stage(cfg: &ExperimentConfig, layout: &Layout) -> Result<GeneratorReport> {
    let ds = load_dataset(cfg, layout)?;
    let reps = representations(cfg, layout, &ds)?;
    let nt = ds.scene.n_times;
    let data: Vec<([f64; 3], Vec<f64>)> =
        reps.iter().enumerate().map(|(i, r)| (ds.entries[i / nt].tensor.loc, r.f.clone())).collect();
    let (gen, log) = train_generator(&data, cfg.generator_config()?, &cfg.generator_train())?;
    let meta = GeneratorMeta {
        stage: "generator".into(),
        seed: cfg.seed,
        loc_mean: gen.loc_norm.mean,
        loc_std: gen.loc_norm.std,
        latent_mean: gen.latent_norm.mean.clone(),
        latent_std: gen.latent_norm.std,
    };
    checkpoint::save(&layout.generator(), &gen.store, serde_json::to_value(&meta).expect("plain struct"))?;
    let report = GeneratorReport { final_loss: tail_loss(&log) };
    trainlog::save(&layout.generator_log(), &log, Some(serde_json::to_value(report).expect("plain struct")))?;
    Ok(report)
}

pub fn load_generator(cfg: &ExperimentConfig, layout: &Layout) -> Result<Generator> {
    let stem = layout.generator();
    require(&stem, "generator checkpoint")?;
    let meta: GeneratorMeta = serde_json::from_value(checkpoint::manifest(&stem)?.meta)
        .map_err(|e| HarnessError::format(&checkpoint::paths(&stem).1, e.to_string()))?;
    let loc_norm = LocNorm { mean: meta.loc_mean, std: meta.loc_std };
    let latent_norm = LatentNorm { mean: meta.latent_mean, std: meta.latent_std };
    let mut gen = Generator::new(cfg.generator_config()?, loc_norm, latent_norm, cfg.seed)?;
    checkpoint::load_into(&stem, &mut gen.store)?;
    Ok(gen)
}

/// Which models `train` fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Encoder,
    Decoder,
    Generator,
    All,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decoder: Option<DecoderReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorReport>,
}

pub fn run_train(cfg: &ExperimentConfig, layout: &Layout, stage: Stage) -> Result<TrainReport> {
    let mut report = TrainReport::default();
    if matches!(stage, Stage::Encoder | Stage::All) {
        report.encoder = Some(train_encoder_stage(cfg, layout)?);
    }
    if matches!(stage, Stage::Decoder | Stage::All) {
        report.decoder = Some(train_decoder_stage(cfg, layout)?);
    }
    if matches!(stage, Stage::Generator | Stage::All) {
        report.generator = Some(train_generator_stage(cfg, layout)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip_matches_tensor_layout() {
        let mut cfg = crate::config::desk();
        cfg.scene.n_locations = 2;
        cfg.scene.n_times = 2;
        let ds = build_dataset(&cfg).unwrap();
        let codec = codec(&ds).unwrap();
        let e = &ds.entries[1];
        let img = codec.to_image(e.tensor.time_slice(1)).unwrap();
        let mats = image_to_channel(&codec, &img).unwrap();
        for (k, m) in mats.iter().enumerate() {
            let want = e.tensor.matrix(1, k);
            let err = m.add(&want.scale(C64::new(-1.0, 0.0))).unwrap().frobenius();
            assert!(err <= 1e-12 * want.frobenius(), "subcarrier {k}: {err}");
        }
    }

    #[test]
    fn stages_need_their_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        let cfg = crate::config::desk();
        let err = run_train(&cfg, &layout, Stage::Encoder).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
        run_gen(&cfg, &layout).unwrap();
        for stage in [Stage::Decoder, Stage::Generator] {
            let err = run_train(&cfg, &layout, stage).unwrap_err();
            assert_eq!(err.exit_code(), 3, "{err}");
            assert!(err.to_string().contains("encoder"), "{err}");
        }
    }
}
