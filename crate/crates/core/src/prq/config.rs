use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Elementwise nonlinearity between the two affine layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Tanh => 0,
            Activation::Identity => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Tokenizer hyper-parameters. Defaults are sized for a laptop; the
/// published scale is codebook 1024, latent 512, 4 layers, window 4.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrqConfig {
    pub codebook_size: usize,
    pub latent_dim: usize,
    /// Quantization layers (K + 1).
    pub layers: usize,
    /// Temporal window W: frames per latent step.
    pub downsample: usize,
    /// Commitment weight.
    pub beta: f64,
    pub hidden_dim: usize,
    pub ema_decay: f64,
    /// Entries whose usage EMA falls below this after an epoch are re-seeded.
    pub dead_code_threshold: f64,
    pub learning_rate: f64,
    /// Windows per mini-batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub activation: Activation,
    /// Pin row 0 of every codebook to the zero vector.
    pub zero_code: bool,
    /// Reuse a single codebook for every layer instead of one per layer.
    pub share_layers: bool,
}

impl Default for PrqConfig {
    fn default() -> Self {
        PrqConfig {
            codebook_size: 256,
            latent_dim: 64,
            layers: 4,
            downsample: 4,
            beta: 0.25,
            hidden_dim: 256,
            ema_decay: 0.99,
            dead_code_threshold: 1.0,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 50,
            activation: Activation::Tanh,
            zero_code: false,
            share_layers: false,
        }
    }
}

impl PrqConfig {
    pub fn published_scale() -> Self {
        PrqConfig {
            codebook_size: 1024,
            latent_dim: 512,
            layers: 4,
            downsample: 4,
            learning_rate: 1e-4,
            batch_size: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(invalid("layers must be at least 1"));
        }
        if self.downsample < 1 {
            return Err(invalid("downsample must be at least 1"));
        }
        if self.codebook_size < 2 || self.codebook_size > u32::MAX as usize / 2 {
            return Err(invalid("codebook_size must be at least 2"));
        }
        if self.zero_code && self.codebook_size < 3 {
            return Err(invalid("zero_code needs codebook_size of at least 3"));
        }
        if self.latent_dim < 1 || self.hidden_dim < 1 {
            return Err(invalid("latent_dim and hidden_dim must be positive"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(invalid("beta must be non-negative"));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(invalid("ema_decay must lie in (0, 1)"));
        }
        if !(self.dead_code_threshold.is_finite() && self.dead_code_threshold >= 0.0) {
            return Err(invalid("dead_code_threshold must be non-negative"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid("learning_rate must be positive"));
        }
        if self.batch_size < 1 {
            return Err(invalid("batch_size must be at least 1"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PrqConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn book_count(&self) -> usize {
        if self.share_layers {
            1
        } else {
            self.layers
        }
    }
}
