use serde::{Deserialize, Serialize};

use crate::data::Subset;
use crate::error::{Error, Result};
use crate::models::Pretraining;

/// Default patience after the minimum epoch budget.
pub const DEFAULT_PATIENCE: usize = 20;
/// Default cap on epochs, as a multiple of the minimum.
pub const MAX_EPOCH_FACTOR: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub batch_size: usize,
    /// Smallest step gap between paired frames; used by siamese pre-training only.
    pub min_distance: usize,
    /// Epochs that always run.
    pub min_epochs: usize,
    /// Epochs without improvement tolerated after `min_epochs`.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Frozen validation pairs for siamese pre-training.
    pub validation_pairs: usize,
}

impl TrainConfig {
    fn base(min_epochs: usize, learning_rate: f64, dropout: f64, batch_size: usize, min_distance: usize) -> Self {
        Self {
            learning_rate,
            dropout,
            batch_size,
            min_distance,
            min_epochs,
            patience: DEFAULT_PATIENCE,
            max_epochs: min_epochs * MAX_EPOCH_FACTOR,
            seed: 0,
            validation_pairs: 1024,
        }
    }

    pub fn supervised(subset: Subset) -> Self {
        let (lr, p, bs) = match subset {
            Subset::FD001 => (0.0056, 0.4, 128),
            Subset::FD002 => (0.0903, 0.3, 512),
            Subset::FD003 => (0.095, 0.2, 64),
            Subset::FD004 => (0.06635, 0.0, 64),
        };
        Self::base(200, lr, p, bs, 1)
    }

    pub fn self_supervised(subset: Subset) -> Self {
        let (lr, p, d) = match subset {
            Subset::FD001 => (0.00015, 0.2, 10),
            Subset::FD002 => (0.01155, 0.4, 15),
            Subset::FD003 => (0.00615, 0.1, 15),
            Subset::FD004 => (0.07455, 0.1, 10),
        };
        Self::base(100, lr, p, 64, d)
    }

    pub fn autoencoder(subset: Subset) -> Self {
        let (lr, p, bs, d) = match subset {
            Subset::FD001 => (0.0001, 0.1, 64, 1),
            Subset::FD002 => (0.0248, 0.4, 256, 15),
            Subset::FD003 => (0.015, 0.0, 64, 1),
            Subset::FD004 => (0.0006, 0.0, 64, 10),
        };
        Self::base(100, lr, p, bs, d)
    }

    /// Five CD-1 epochs at learning rate 1e-4.
    pub fn rbm() -> Self {
        let mut c = Self::base(5, 1e-4, 0.0, 64, 1);
        c.max_epochs = 5;
        c
    }

    /// Defaults for the pre-training stage of `method`; `None` for the baseline.
    pub fn pretraining(method: Pretraining, subset: Subset) -> Option<Self> {
        match method {
            Pretraining::None => None,
            Pretraining::Autoencoder => Some(Self::autoencoder(subset)),
            Pretraining::Rbm => Some(Self::rbm()),
            Pretraining::SelfSupervised => Some(Self::self_supervised(subset)),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Sets the epoch budget; `max_epochs` follows at the default multiple.
    pub fn with_epochs(mut self, min_epochs: usize) -> Self {
        self.min_epochs = min_epochs;
        self.max_epochs = min_epochs * MAX_EPOCH_FACTOR;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidProbability(self.dropout));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if self.min_epochs == 0 || self.max_epochs < self.min_epochs {
            return Err(Error::Config(format!(
                "epoch budget must satisfy 0 < min ({}) <= max ({})",
                self.min_epochs, self.max_epochs
            )));
        }
        Ok(())
    }
}
