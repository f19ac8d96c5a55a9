use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Padding;
use crate::data::SENSOR_CHANNELS;
use crate::error::{Error, Result};

pub const LATENT_DIM: usize = 64;
pub const BLOCKS: usize = 6;
pub const IN_CHANNELS: usize = SENSOR_CHANNELS.len();
pub const DEFAULT_FILTERS: usize = 32;

/// Padding of 1-based block `k`: odd blocks keep the length, even blocks shrink it by two.
pub fn block_padding(k: usize) -> Padding {
    if k % 2 == 1 {
        Padding::Same
    } else {
        Padding::Valid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub window: usize,
    pub in_channels: usize,
    pub filters: usize,
    pub latent: usize,
    /// Time-step dropout probability between convolution blocks.
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(window: usize, filters: usize, dropout: f64) -> Result<Self> {
        let cfg = Self {
            window,
            in_channels: IN_CHANNELS,
            filters,
            latent: LATENT_DIM,
            dropout,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 7 {
            return Err(Error::Config(format!(
                "window {} leaves no time steps after three valid convolutions",
                self.window
            )));
        }
        if self.filters == 0 || self.in_channels == 0 || self.latent == 0 {
            return Err(Error::Config("filters, channels and latent size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidProbability(self.dropout));
        }
        Ok(())
    }

    /// Time length entering the final fully-connected layer.
    pub fn flat_time(&self) -> usize {
        self.window - 6
    }

    pub fn flat_features(&self) -> usize {
        self.filters * self.flat_time()
    }

    /// Trainable scalars of the feature extractor.
    pub fn extractor_param_count(&self) -> usize {
        let m = self.filters;
        let first = self.in_channels * 3 * m + m;
        let rest = (BLOCKS - 1) * (m * m * 3 + m);
        let norms = BLOCKS * 2 * m;
        let fc = self.latent * self.flat_features() + self.latent;
        first + rest + norms + fc
    }

    /// Hash of the architecture-defining fields; dropout is a training setting and excluded.
    pub fn fingerprint(&self) -> String {
        let schedule: Vec<&str> = (1..=BLOCKS)
            .map(|k| match block_padding(k) {
                Padding::Same => "same",
                Padding::Valid => "valid",
            })
            .collect();
        let text = format!(
            "w={};m={};latent={};in={};kernel=3;padding={}",
            self.window,
            self.filters,
            self.latent,
            self.in_channels,
            schedule.join(",")
        );
        Sha256::digest(text.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
