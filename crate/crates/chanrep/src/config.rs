//! Experiment configuration: TOML with `desk` and `paper` presets.
//!
//! A config file names a preset and overrides any subset of its fields;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use chanrep_core::chanmodel::{ArrayGeometry, SceneConfig, SceneSampler};
use chanrep_core::latentgen::{DiffusionSchedule, GeneratorConfig, NoiseNet, REFERENCE_INTERCEPT, REFERENCE_SLOPE, REFERENCE_STEPS};
use chanrep_core::nn::ParamStore;
use chanrep_core::repr::{ContrastiveConfig, DecoderConfig, EncoderConfig, ImageCodec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{read_string, HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub scene: SceneSection,
    pub encoder: EncoderSection,
    pub decoder: DecoderSection,
    pub generator: GeneratorSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub n_locations: usize,
    pub n_bs: usize,
    pub n_times: usize,
    pub n_subcarriers: usize,
    pub bandwidth_hz: f64,
    /// BS array `n_x x n_y x n_z`.
    pub n_x: usize,
    pub n_y: usize,
    pub n_z: usize,
    /// UE ports.
    pub n_r: usize,
    pub phase_const: f64,
    pub noise_var: f64,
    pub grid_spacing: f64,
    pub n_clusters: usize,
    pub paths_per_cluster: usize,
    /// Ray-path CSV to import instead of sampling a synthetic scene.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub import_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub patch: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub depth: usize,
    pub mlp_ratio: usize,
    pub n_re: usize,
    pub temperature: f64,
    pub momentum: f64,
    pub queue_capacity: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub final_lr_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub depth: usize,
    pub mlp_ratio: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub final_lr_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub width: usize,
    pub d_cond: usize,
    pub n_heads: usize,
    pub kernel: usize,
    pub n_steps: usize,
    pub intercept: f64,
    /// Defaults to the reference slope rescaled by `(600 / n_steps)²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub final_lr_frac: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    OriginalTraversal,
    MeanRepresentation,
    #[serde(rename = "generated-1")]
    Generated1,
    #[serde(rename = "generated-10")]
    Generated10,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::OriginalTraversal => "original-traversal",
            Method::MeanRepresentation => "mean-representation",
            Method::Generated1 => "generated-1",
            Method::Generated10 => "generated-10",
        }
    }

    pub fn needs_decoder(self) -> bool {
        self != Method::OriginalTraversal
    }

    pub fn needs_generator(self) -> bool {
        matches!(self, Method::Generated1 | Method::Generated10)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub methods: Vec<Method>,
    /// Layer counts `N_l` for the single-BS task.
    pub n_layers: Vec<usize>,
    pub dual: bool,
    /// Candidates drawn by the `generated-10` method.
    pub n_gen: usize,
    /// Moving-average window of the line-chart export.
    pub window: usize,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => desk(),
            Preset::Paper => paper(),
        }
    }

    /// Parse a TOML document on top of the preset it names (desk if absent).
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(one_line(&e.to_string())))?;
        let preset = match user.get("preset") {
            None => Preset::Desk,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| HarnessError::Config(format!("preset: {}", one_line(&e.to_string()))))?,
        };
        let mut base = toml::Table::try_from(Self::preset(preset)).map_err(|e| HarnessError::Config(e.to_string()))?;
        merge(&mut base, user);
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(one_line(&e.to_string())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file; a relative `import_csv` is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_string(path).map_err(|e| match e {
            HarnessError::MissingArtifact { path, .. } => HarnessError::Config(format!("config file {} not found", path.display())),
            other => other,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(csv), Some(dir)) = (cfg.scene.import_csv.as_mut(), path.parent()) {
            if csv.is_relative() {
                *csv = dir.join(&*csv);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let s = &self.scene;
        if s.n_locations == 0 || s.n_times == 0 || s.n_subcarriers == 0 {
            return bad("scene sizes must be positive".into());
        }
        if !(1..=2).contains(&s.n_bs) {
            return bad(format!("scene.n_bs must be 1 or 2, got {}", s.n_bs));
        }
        self.scene_config().map_err(|e| HarnessError::Config(format!("scene: {e}")))?;
        self.encoder_config().validate().map_err(|e| HarnessError::Config(format!("encoder: {e}")))?;
        self.contrastive_config().validate().map_err(|e| HarnessError::Config(format!("encoder: {e}")))?;
        self.decoder_config().validate().map_err(|e| HarnessError::Config(format!("decoder: {e}")))?;
        self.decoder_train().validate().map_err(|e| HarnessError::Config(format!("decoder: {e}")))?;
        self.generator_train().validate().map_err(|e| HarnessError::Config(format!("generator: {e}")))?;
        let g = self.generator_config().map_err(|e| HarnessError::Config(format!("generator: {e}")))?;
        g.schedule().map_err(|e| HarnessError::Config(format!("generator: {e}")))?;
        if g.width == 0 || g.kernel % 2 == 0 || g.d_cond % 2 != 0 {
            return bad("generator needs positive width, odd kernel and even d_cond".into());
        }
        let mut scratch = ParamStore::new();
        NoiseNet::new(&mut scratch, g, &mut chanrep_core::rng::stream(0, 0, &[]))
            .map_err(|e| HarnessError::Config(format!("generator: {e}")))?;
        if self.eval.n_gen == 0 || self.eval.window == 0 {
            return bad("eval.n_gen and eval.window must be positive".into());
        }
        if self.eval.methods.is_empty() {
            return bad("eval.methods is empty".into());
        }
        let max_layers = s.n_r.min(s.n_x * s.n_y * s.n_z);
        if let Some(l) = self.eval.n_layers.iter().find(|&&l| l == 0 || l > max_layers) {
            return bad(format!("eval.n_layers entry {l} outside 1..={max_layers}"));
        }
        if self.eval.dual && s.n_bs != 2 {
            return bad("eval.dual needs scene.n_bs = 2".into());
        }
        Ok(())
    }

    pub fn geometry(&self) -> chanrep_core::Result<ArrayGeometry> {
        let s = &self.scene;
        ArrayGeometry::new(s.n_x, s.n_y, s.n_z, s.n_r, s.phase_const)
    }

    pub fn scene_config(&self) -> chanrep_core::Result<SceneConfig> {
        let s = &self.scene;
        let scene = SceneConfig {
            n_subcarriers: s.n_subcarriers,
            bandwidth: s.bandwidth_hz,
            n_times: s.n_times,
            geometry: self.geometry()?,
            noise_var: s.noise_var,
            rng_seed: self.seed,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn sampler(&self) -> SceneSampler {
        SceneSampler {
            grid_spacing: self.scene.grid_spacing,
            n_clusters: self.scene.n_clusters,
            paths_per_cluster: self.scene.paths_per_cluster,
            ..SceneSampler::default()
        }
    }

    pub fn codec_dims(&self) -> (usize, usize) {
        let s = &self.scene;
        (s.n_subcarriers, s.n_r * s.n_x * s.n_y * s.n_z)
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        let e = &self.encoder;
        let (height, width) = self.codec_dims();
        EncoderConfig {
            height,
            width,
            patch: e.patch,
            d_model: e.d_model,
            n_heads: e.n_heads,
            depth: e.depth,
            mlp_ratio: e.mlp_ratio,
            n_re: e.n_re,
        }
    }

    pub fn contrastive_config(&self) -> ContrastiveConfig {
        let e = &self.encoder;
        ContrastiveConfig {
            temperature: e.temperature,
            momentum: e.momentum,
            queue_capacity: e.queue_capacity,
            batch_size: e.batch_size,
            steps: e.steps,
            lr: e.lr,
            final_lr_frac: e.final_lr_frac,
            seed: self.seed,
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        let d = &self.decoder;
        let (height, width) = self.codec_dims();
        DecoderConfig {
            n_re: self.encoder.n_re,
            height,
            width,
            d_model: d.d_model,
            n_heads: d.n_heads,
            depth: d.depth,
            mlp_ratio: d.mlp_ratio,
        }
    }

    pub fn decoder_train(&self) -> TrainConfig {
        let d = &self.decoder;
        TrainConfig { steps: d.steps, batch_size: d.batch_size, lr: d.lr, final_lr_frac: d.final_lr_frac, seed: self.seed }
    }

    pub fn generator_config(&self) -> chanrep_core::Result<GeneratorConfig> {
        let g = &self.generator;
        let slope = match g.slope {
            Some(s) => s,
            None => DiffusionSchedule::compressed(g.n_steps.max(1))?.slope,
        };
        Ok(GeneratorConfig {
            n_re: self.encoder.n_re,
            width: g.width,
            d_cond: g.d_cond,
            n_heads: g.n_heads,
            kernel: g.kernel,
            n_steps: g.n_steps,
            intercept: g.intercept,
            slope,
        })
    }

    pub fn generator_train(&self) -> TrainConfig {
        let g = &self.generator;
        TrainConfig { steps: g.steps, batch_size: g.batch_size, lr: g.lr, final_lr_frac: g.final_lr_frac, seed: self.seed }
    }

    pub fn codec(&self, norm_scale: f64) -> chanrep_core::Result<ImageCodec> {
        let s = &self.scene;
        ImageCodec::new(s.n_subcarriers, s.n_r, s.n_x * s.n_y * s.n_z, norm_scale)
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn all_methods() -> Vec<Method> {
    vec![Method::OriginalTraversal, Method::MeanRepresentation, Method::Generated1, Method::Generated10]
}

/// Single-core preset: 64 locations, two BSs, 8 time instants, 16
/// subcarriers, 2 x 8 antennas.
pub fn desk() -> ExperimentConfig {
    ExperimentConfig {
        preset: Preset::Desk,
        seed: 1,
        out_dir: PathBuf::from("out"),
        scene: SceneSection {
            n_locations: 64,
            n_bs: 2,
            n_times: 8,
            n_subcarriers: 16,
            bandwidth_hz: 1.92e6,
            n_x: 4,
            n_y: 2,
            n_z: 1,
            n_r: 2,
            phase_const: std::f64::consts::PI,
            noise_var: 1.0,
            grid_spacing: 8.0,
            n_clusters: 3,
            paths_per_cluster: 2,
            import_csv: None,
        },
        encoder: EncoderSection {
            patch: 4,
            d_model: 32,
            n_heads: 4,
            depth: 2,
            mlp_ratio: 2,
            n_re: 32,
            temperature: 0.05,
            momentum: 0.99,
            queue_capacity: 512,
            batch_size: 16,
            steps: 12000,
            lr: 2e-3,
            final_lr_frac: 0.1,
        },
        decoder: DecoderSection {
            d_model: 32,
            n_heads: 4,
            depth: 2,
            mlp_ratio: 2,
            batch_size: 16,
            steps: 12000,
            lr: 2e-3,
            final_lr_frac: 0.1,
        },
        generator: GeneratorSection {
            width: 8,
            d_cond: 32,
            n_heads: 4,
            kernel: 3,
            n_steps: 100,
            intercept: REFERENCE_INTERCEPT,
            slope: None,
            batch_size: 16,
            steps: 20000,
            lr: 2e-3,
            final_lr_frac: 0.1,
        },
        eval: EvalSection { methods: all_methods(), n_layers: vec![1, 2], dual: true, n_gen: 10, window: 51 },
    }
}

/// Full-scale settings: 3030 locations, 50 instants, 128 subcarriers,
/// 4 x 32 antennas, 600 diffusion steps.
pub fn paper() -> ExperimentConfig {
    ExperimentConfig {
        preset: Preset::Paper,
        seed: 1,
        out_dir: PathBuf::from("out"),
        scene: SceneSection {
            n_locations: 3030,
            n_bs: 2,
            n_times: 50,
            n_subcarriers: 128,
            bandwidth_hz: 1.92e6,
            n_x: 8,
            n_y: 2,
            n_z: 2,
            n_r: 4,
            phase_const: std::f64::consts::PI,
            noise_var: 1.0,
            grid_spacing: 2.0,
            n_clusters: 3,
            paths_per_cluster: 2,
            import_csv: None,
        },
        encoder: EncoderSection {
            patch: 16,
            d_model: 512,
            n_heads: 8,
            depth: 4,
            mlp_ratio: 4,
            n_re: 128,
            temperature: 5e-3,
            momentum: 0.99,
            queue_capacity: 16384,
            batch_size: 64,
            steps: 100_000,
            lr: 5e-5,
            final_lr_frac: 0.1,
        },
        decoder: DecoderSection {
            d_model: 512,
            n_heads: 8,
            depth: 8,
            mlp_ratio: 4,
            batch_size: 64,
            steps: 100_000,
            lr: 5e-5,
            final_lr_frac: 0.1,
        },
        generator: GeneratorSection {
            width: 64,
            d_cond: 256,
            n_heads: 8,
            kernel: 3,
            n_steps: REFERENCE_STEPS,
            intercept: REFERENCE_INTERCEPT,
            slope: Some(REFERENCE_SLOPE),
            batch_size: 64,
            steps: 100_000,
            lr: 5e-3,
            final_lr_frac: 0.1,
        },
        eval: EvalSection { methods: all_methods(), n_layers: vec![1, 2, 4], dual: true, n_gen: 10, window: 51 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        desk().validate().unwrap();
        paper().validate().unwrap();
        assert_eq!(paper().encoder_config().grid().unwrap().n_tokens(), 64);
        assert_eq!(desk().encoder_config().grid().unwrap().n_tokens(), 16);
        assert_eq!(paper().decoder_config().out_patch().unwrap(), 16);
    }

    #[test]
    fn method_names_match_labels() {
        for m in all_methods() {
            let text = format!("[eval]\nmethods = [\"{}\"]\n", m.label());
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap().eval.methods, vec![m]);
        }
    }

    #[test]
    fn overrides_merge_onto_preset() {
        let cfg = ExperimentConfig::from_toml("seed = 9\n[encoder]\nsteps = 10\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.encoder.steps, 10);
        assert_eq!(cfg.encoder.d_model, desk().encoder.d_model);
        let p = ExperimentConfig::from_toml("preset = \"paper\"").unwrap();
        assert_eq!(p, paper());
    }

    #[test]
    fn round_trip_through_toml() {
        let text = desk().to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), desk());
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            "[encoder]\nbogus = 1\n",
            "preset = \"huge\"\n",
            "[encoder]\nn_heads = 3\n",
            "[scene]\nn_bs = 3\n",
            "[eval]\nn_layers = [3]\n",
            "[encoder]\ntemperature = 0.0\n",
            "not toml at all [",
        ] {
            let err = ExperimentConfig::from_toml(bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}: {err}");
        }
    }
}
