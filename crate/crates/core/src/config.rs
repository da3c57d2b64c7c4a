//! Run configuration: one TOML document with a section per module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ElboConfig;
use crate::model::ModelConfig;
use crate::noise::KernelVariant;
use crate::rng;
use crate::sampler::{Decoder, SamplerConfig};
use crate::sim::SimConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub steps: usize,
    pub decoder: Decoder,
    /// One output set per guidance strength.
    pub gamma: Vec<f64>,
    pub num: usize,
    /// Sequence length for the uniform and mask variants.
    pub length: usize,
    /// `maximize`, `minimize` or `class:<k>`.
    pub condition: String,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            steps: 128,
            decoder: Decoder::Tweedie,
            gamma: vec![0.0],
            num: 64,
            length: 48,
            condition: "maximize".into(),
        }
    }
}

impl SampleSection {
    pub fn sampler_config(&self, gamma: f64, seed: u64) -> SamplerConfig {
        SamplerConfig {
            steps: self.steps,
            decoder: self.decoder,
            guidance_strength: gamma,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub metrics: Vec<String>,
    pub split: String,
    /// Evaluate only the first `limit` records (0 = all).
    pub limit: usize,
}

pub const METRICS: [&str; 3] = ["elbo_perplexity", "non_germline_accuracy", "bayes_ceiling"];

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metrics: METRICS.iter().map(|s| s.to_string()).collect(),
            split: "test".into(),
            limit: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    /// `hydropathy` or a `token<TAB>value` scale file.
    pub classifier: Option<String>,
    pub germlines: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            out_dir: "runs".into(),
            checkpoint: None,
            resume: None,
            classifier: None,
            germlines: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: KernelVariant,
    pub sim: SimConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SampleSection,
    pub elbo: ElboConfig,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            variant: KernelVariant::Germline,
            sim: SimConfig::default(),
            model: ModelConfig::for_variant(KernelVariant::Germline),
            train: TrainConfig::default(),
            sampler: SampleSection::default(),
            elbo: ElboConfig::default(),
            eval: EvalSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.normalize();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Push the global seed and variant into every section.
    pub fn normalize(&mut self) {
        self.sim.seed = self.seed;
        self.train.seed = self.seed;
        self.elbo.seed = self.seed;
        self.model.variant = self.variant;
        self.model.time_conditioned = !self.variant.is_absorbing();
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.normalize();
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Fingerprint of the effective configuration.
    pub fn hash(&self) -> String {
        rng::fingerprint(&self.to_toml())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.paths.out_dir.join("model.ckpt"))
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.elbo.validate()?;
        if self.sampler.steps == 0 || self.sampler.num == 0 || self.sampler.length == 0 {
            return Err(Error::InvalidArgument("sampler steps, num and length must be >= 1".into()));
        }
        if self.sampler.gamma.is_empty() || self.sampler.gamma.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::InvalidArgument("sampler.gamma needs one or more values >= 0".into()));
        }
        if let Some(m) = self.eval.metrics.iter().find(|m| !METRICS.contains(&m.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "unknown metric {m:?} (expected one of {METRICS:?})"
            )));
        }
        Ok(())
    }
}
