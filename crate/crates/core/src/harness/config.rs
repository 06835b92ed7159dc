use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{SyntheticConfig};
use crate::losses::LossWeights;
use crate::postproc::PostprocConfig;
use crate::trainer::{Ablation, LrSchedule, NetworkSettings, StageConfig, TrainConfig};
use crate::{Error, Result};

/// Settings a single method may change. Stage 1 and the networks stay
/// shared so every method trains the same generator against the same prior.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodOverride {
    pub stage2: Option<StageConfig>,
    pub weights: Option<LossWeights>,
    pub d_steps_per_g_step: Option<usize>,
}

/// One leave-one-out ablation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub methods: Vec<Ablation>,
    /// Restricts the run to these subjects; all subjects on disk when absent.
    #[serde(default)]
    pub subjects: Option<Vec<String>>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub overrides: BTreeMap<Ablation, MethodOverride>,
    #[serde(default)]
    pub postproc: PostprocConfig,
    pub out: PathBuf,
    pub seed: u64,
    #[serde(default = "default_predict_batch")]
    pub predict_batch_size: usize,
}

fn default_predict_batch() -> usize {
    32
}

impl ExperimentConfig {
    /// The pinned benchmark experiment: all four methods on the
    /// scapula-like v1 data, with the stage-1 schedule the auto-encoder
    /// needs on this data and batches of 8 in stage 2 so the generator gets
    /// enough updates from 352 training slices.
    pub fn reference(dataset: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        let data = SyntheticConfig::scapula_like_v1();
        let (_, h, w) = data.volume_shape;
        let train = TrainConfig {
            stage1: StageConfig::new(0.001, 4, 40).with_schedule(LrSchedule::Cosine),
            stage2: StageConfig::new(0.0001, 8, 20),
            networks: NetworkSettings::desk_scale((h, w), 8),
            ..TrainConfig::default()
        };
        Self {
            dataset: dataset.into(),
            methods: Ablation::ALL.to_vec(),
            subjects: None,
            train,
            overrides: BTreeMap::new(),
            postproc: PostprocConfig::default(),
            out: out.into(),
            seed: data.seed,
            predict_batch_size: default_predict_batch(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("methods", "must name at least one method"));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::config("methods", "lists a method twice"));
        }
        for m in self.overrides.keys() {
            if !self.methods.contains(m) {
                return Err(Error::config(format!("overrides.{m}"), "names a method that is not run"));
            }
        }
        if self.predict_batch_size == 0 {
            return Err(Error::config("predict_batch_size", "must be >= 1"));
        }
        self.postproc.validate()?;
        for &m in &self.methods {
            self.method_config(m).validate()?;
        }
        Ok(())
    }

    /// Base training settings with the experiment seed applied.
    pub fn base_config(&self) -> TrainConfig {
        let mut c = self.train.clone();
        c.seed = self.seed;
        c.augmentation.seed = self.seed;
        c
    }

    /// Settings for `method`: base, then its override, then the ablation flag.
    pub fn method_config(&self, method: Ablation) -> TrainConfig {
        let mut c = self.base_config();
        c.ablation = method;
        if let Some(o) = self.overrides.get(&method) {
            if let Some(s) = &o.stage2 {
                c.stage2 = s.clone();
            }
            if let Some(w) = o.weights {
                c.weights = w;
            }
            if let Some(d) = o.d_steps_per_g_step {
                c.d_steps_per_g_step = d;
            }
        }
        c
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Reads a TOML file. A missing or malformed file is a usage error.
pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))
}
