use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use svkit_core::audio::DEFAULT_VAD_THRESHOLD;
use svkit_core::network::ModelConfig;
use svkit_core::trainer::TrainConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_run_id")]
    pub run_id: String,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub prune: PruneConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

fn default_run_id() -> String {
    "run".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub vad_threshold: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            vad_threshold: DEFAULT_VAD_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneConfig {
    pub tau: f64,
    pub fine_tune_epochs: usize,
    pub fine_tune_learning_rate: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            fine_tune_epochs: 2,
            fine_tune_learning_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub seed: u64,
    /// Speakers held out (the last ones in manifest order) for dev trials.
    pub dev_speakers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_genuine: 200,
            n_impostor: 200,
            seed: 0,
            dev_speakers: 5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory holding the feature `manifest.csv` written by `extract`.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("config error at `{path}`: {}", e.inner())
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates a config; relative paths are taken relative to
    /// the config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config = Self::from_json(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.paths.data_dir, &mut config.paths.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if !config.paths.data_dir.is_dir() {
            bail!("config error at `paths.data_dir`: {} is not a directory", config.paths.data_dir.display());
        }
        std::fs::create_dir_all(&config.paths.out_dir)
            .with_context(|| format!("creating {}", config.paths.out_dir.display()))?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let t = self.features.vad_threshold;
        if !(t > 0.0 && t < 1.0) {
            bail!("config error at `features.vad_threshold`: must be in (0, 1), got {t}");
        }
        self.train
            .validate()
            .map_err(|e| anyhow::anyhow!("config error at `train`: {e}"))?;
        if self.prune.tau.is_nan() || self.prune.tau < 0.0 {
            bail!("config error at `prune.tau`: must be >= 0");
        }
        if self.prune.fine_tune_learning_rate.is_nan() || self.prune.fine_tune_learning_rate < 0.0 {
            bail!("config error at `prune.fine_tune_learning_rate`: must be >= 0");
        }
        if self.eval.n_genuine == 0 || self.eval.n_impostor == 0 {
            bail!("config error at `eval`: n_genuine and n_impostor must be >= 1");
        }
        if self.run_id.is_empty() || self.run_id.contains([',', '\n', '"']) {
            bail!("config error at `run_id`: must be non-empty without commas, quotes or newlines");
        }
        Ok(())
    }

    pub fn manifest(&self) -> PathBuf {
        self.paths.data_dir.join("manifest.csv")
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }
}
