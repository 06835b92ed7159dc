use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AdamConfig;
use crate::data::AugmentationConfig;
use crate::losses::LossWeights;
use crate::networks::{CaeConfig, DiscriminatorConfig, GeneratorConfig};
use crate::{Error, Result};

/// Which loss terms (and therefore which auxiliary networks) a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Dice only.
    Unet,
    /// Dice + latent shape loss.
    CaeUnet,
    /// Dice + adversarial loss.
    CganUnet,
    /// All three terms.
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Unet, Ablation::CaeUnet, Ablation::CganUnet, Ablation::Full];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Unet => "unet",
            Ablation::CaeUnet => "cae_unet",
            Ablation::CganUnet => "cgan_unet",
            Ablation::Full => "full",
        }
    }

    pub fn uses_encoder(self) -> bool {
        matches!(self, Ablation::CaeUnet | Ablation::Full)
    }

    pub fn uses_discriminator(self) -> bool {
        matches!(self, Ablation::CganUnet | Ablation::Full)
    }

    /// `w` with the terms this ablation drops set to zero.
    pub fn weights(self, w: LossWeights) -> LossWeights {
        LossWeights {
            lambda1: if self.uses_discriminator() { w.lambda1 } else { 0.0 },
            lambda2: if self.uses_encoder() { w.lambda2 } else { 0.0 },
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config("ablation", format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
}

/// Per-epoch learning-rate rule. `lr` is the rate of the first epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `lr` towards zero over the stage.
    Cosine,
}

/// One training stage. Tables in a config file must give `lr`,
/// `batch_size` and `epochs` together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    #[serde(default)]
    pub optimizer: Optimizer,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub schedule: LrSchedule,
}

impl StageConfig {
    pub fn new(lr: f64, batch_size: usize, epochs: usize) -> Self {
        Self {
            optimizer: Optimizer::Adam,
            lr,
            batch_size,
            epochs,
            schedule: LrSchedule::Constant,
        }
    }

    pub fn with_schedule(mut self, schedule: LrSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let t = epoch as f64 / self.epochs as f64;
                self.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("{name}.lr"), "must be > 0"));
        }
        if self.batch_size < 1 {
            return Err(Error::config(format!("{name}.batch_size"), "must be >= 1"));
        }
        if self.epochs < 1 {
            return Err(Error::config(format!("{name}.epochs"), "must be >= 1"));
        }
        Ok(())
    }
}

/// Architectures of the three networks; all share one slice size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSettings {
    pub generator: GeneratorConfig,
    pub cae: CaeConfig,
    pub discriminator: DiscriminatorConfig,
}

impl NetworkSettings {
    /// Depth-3 networks for `size` slices with `base` first-level channels.
    pub fn desk_scale(size: (usize, usize), base: usize) -> Self {
        Self {
            generator: GeneratorConfig {
                input_size: size,
                depth: 3,
                base_channels: base,
                use_sigmoid_output: true,
            },
            cae: CaeConfig {
                input_size: size,
                depth: 3,
                base_channels: base,
                latent_dim: 64,
            },
            discriminator: DiscriminatorConfig {
                input_size: size,
                depth: 3,
                base_channels: base,
                conditioning: true,
            },
        }
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.generator.input_size
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.cae.validate()?;
        self.discriminator.validate()?;
        if !self.generator.use_sigmoid_output {
            return Err(Error::config(
                "generator.use_sigmoid_output",
                "training needs probabilities for the Dice loss",
            ));
        }
        let size = self.generator.input_size;
        if self.cae.input_size != size {
            return Err(Error::config("cae.input_size", "must equal generator.input_size"));
        }
        if self.discriminator.input_size != size {
            return Err(Error::config("discriminator.input_size", "must equal generator.input_size"));
        }
        Ok(())
    }
}

impl Default for NetworkSettings {
    fn default() -> Self {
        Self::desk_scale((64, 64), 8)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Auto-encoder pre-training.
    pub stage1: StageConfig,
    /// Generator / discriminator training.
    pub stage2: StageConfig,
    pub weights: LossWeights,
    pub d_steps_per_g_step: usize,
    pub seed: u64,
    pub augmentation: AugmentationConfig,
    pub ablation: Ablation,
    pub adam: AdamConfig,
    pub networks: NetworkSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1: StageConfig::new(0.01, 32, 20),
            stage2: StageConfig::new(0.0001, 32, 20),
            weights: LossWeights::default(),
            d_steps_per_g_step: 1,
            seed: 0,
            augmentation: AugmentationConfig::default(),
            ablation: Ablation::Full,
            adam: AdamConfig::default(),
            networks: NetworkSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.stage1.validate("stage1")?;
        self.stage2.validate("stage2")?;
        self.weights.validate()?;
        self.augmentation.validate()?;
        self.networks.validate()?;
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::config("adam", "needs beta1, beta2 in [0, 1) and eps > 0"));
        }
        Ok(())
    }

    /// Loss weights after the ablation has zeroed its unused terms.
    pub fn effective_weights(&self) -> LossWeights {
        self.ablation.weights(self.weights)
    }
}
