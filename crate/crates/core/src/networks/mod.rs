//! The three trainable functions: the encoder-decoder generator `G`, the
//! convolutional auto-encoder (`f`, `g`) and the conditional discriminator `D`.
//!
//! All networks are plain convolution stacks without normalization (ReLU in
//! `G` and `D`, leaky ReLU with slope 0.1 in the auto-encoder), so evaluation
//! and training forwards are the same deterministic function of
//! `(parameters, input)`.

mod cae;
mod checkpoint;
mod discriminator;
mod generator;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use cae::{Decoder, DecoderTape, Encoder, EncoderTape};
pub use checkpoint::{load_checkpoint, save_checkpoint, NetworkCheckpoint, TrainingMeta};
pub use discriminator::{Discriminator, DiscriminatorTape};
pub use generator::{Generator, GeneratorTape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generator,
    Encoder,
    Decoder,
    Discriminator,
}

impl Role {
    pub fn tag(self) -> u8 {
        match self {
            Role::Generator => 1,
            Role::Encoder => 2,
            Role::Decoder => 3,
            Role::Discriminator => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Role::Generator),
            2 => Some(Role::Encoder),
            3 => Some(Role::Decoder),
            4 => Some(Role::Discriminator),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Encoder => "encoder",
            Role::Decoder => "decoder",
            Role::Discriminator => "discriminator",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn check_divisible(field: &str, (h, w): (usize, usize), depth: usize) -> Result<()> {
    let unit = 1usize << depth;
    if h == 0 || w == 0 || h % unit != 0 || w % unit != 0 {
        return Err(Error::config(
            field,
            format!("({h}, {w}) must be positive and divisible by 2^depth = {unit}"),
        ));
    }
    Ok(())
}

/// UNet generator hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub input_size: (usize, usize),
    pub depth: usize,
    pub base_channels: usize,
    /// When false the head emits logits instead of probabilities.
    pub use_sigmoid_output: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            input_size: (256, 256),
            depth: 4,
            base_channels: 32,
            use_sigmoid_output: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::config("generator.depth", "must be at least 1"));
        }
        if self.base_channels < 1 {
            return Err(Error::config("generator.base_channels", "must be at least 1"));
        }
        check_divisible("generator.input_size", self.input_size, self.depth)
    }
}

/// Auto-encoder hyper-parameters, shared by the encoder and decoder halves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaeConfig {
    pub input_size: (usize, usize),
    pub depth: usize,
    pub base_channels: usize,
    pub latent_dim: usize,
}

impl Default for CaeConfig {
    fn default() -> Self {
        Self {
            input_size: (256, 256),
            depth: 4,
            base_channels: 32,
            latent_dim: 128,
        }
    }
}

impl CaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::config("cae.depth", "must be at least 1"));
        }
        if self.base_channels < 1 {
            return Err(Error::config("cae.base_channels", "must be at least 1"));
        }
        check_divisible("cae.input_size", self.input_size, self.depth)?;
        let pixels = self.input_size.0 * self.input_size.1;
        if self.latent_dim < 1 || self.latent_dim >= pixels {
            return Err(Error::config(
                "cae.latent_dim",
                format!("must be in [1, {pixels}) to compress the input"),
            ));
        }
        Ok(())
    }

    pub(crate) fn bottleneck_channels(&self) -> usize {
        self.base_channels << (self.depth - 1)
    }

    pub(crate) fn bottleneck_size(&self) -> (usize, usize) {
        (self.input_size.0 >> self.depth, self.input_size.1 >> self.depth)
    }
}

/// Discriminator hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub input_size: (usize, usize),
    pub depth: usize,
    pub base_channels: usize,
    /// Concatenate the intensity image with the mask (conditional D).
    pub conditioning: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            input_size: (256, 256),
            depth: 4,
            base_channels: 32,
            conditioning: true,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::config("discriminator.depth", "must be at least 1"));
        }
        if self.base_channels < 1 {
            return Err(Error::config("discriminator.base_channels", "must be at least 1"));
        }
        check_divisible("discriminator.input_size", self.input_size, self.depth)
    }
}

/// Architecture block stored inside a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NetworkConfig {
    Generator(GeneratorConfig),
    Cae(CaeConfig),
    Discriminator(DiscriminatorConfig),
}

impl NetworkConfig {
    pub fn admits(&self, role: Role) -> bool {
        matches!(
            (self, role),
            (NetworkConfig::Generator(_), Role::Generator)
                | (NetworkConfig::Cae(_), Role::Encoder | Role::Decoder)
                | (NetworkConfig::Discriminator(_), Role::Discriminator)
        )
    }
}

pub(crate) fn check_batch(what: &str, got: (usize, usize, usize, usize), channels: usize, size: (usize, usize)) -> Result<()> {
    let (n, c, h, w) = got;
    if n == 0 || c != channels || (h, w) != size {
        return Err(Error::Shape(format!(
            "{what}: expected (n>0, {channels}, {}, {}), got ({n}, {c}, {h}, {w})",
            size.0, size.1
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation_names_fields() {
        let g = GeneratorConfig {
            input_size: (60, 64),
            depth: 3,
            ..Default::default()
        };
        assert!(g.validate().unwrap_err().to_string().contains("generator.input_size"));
        let c = CaeConfig {
            input_size: (8, 8),
            depth: 1,
            base_channels: 2,
            latent_dim: 64,
        };
        assert!(c.validate().unwrap_err().to_string().contains("latent_dim"));
        let d = DiscriminatorConfig {
            depth: 0,
            ..Default::default()
        };
        assert!(d.validate().is_err());
    }
}
