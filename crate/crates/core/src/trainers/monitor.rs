use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One line of training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: f64,
    /// Seconds since the Unix epoch when the epoch finished.
    pub timestamp: f64,
}

impl EpochRecord {
    pub fn new(epoch: usize, train_loss: f64, validation: f64) -> Self {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        Self {
            epoch,
            train_loss,
            validation,
            timestamp,
        }
    }
}

pub fn write_history<W: Write>(mut out: W, history: &[EpochRecord]) -> Result<()> {
    for r in history {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Tracks the lowest monitored value and the checkpoint taken at it.
///
/// Epochs are 1-based. Training stops once `min_epochs` have run and `patience`
/// epochs have passed without improvement, or at `max_epochs`.
#[derive(Debug, Clone)]
pub struct EarlyStopMonitor<T> {
    pub metric: String,
    min_epochs: usize,
    max_epochs: usize,
    patience: usize,
    best: Option<(usize, f64, T)>,
    since_best: usize,
    last_epoch: usize,
}

impl<T> EarlyStopMonitor<T> {
    pub fn new(metric: &str, min_epochs: usize, max_epochs: usize, patience: usize) -> Self {
        Self {
            metric: metric.to_string(),
            min_epochs,
            max_epochs,
            patience,
            best: None,
            since_best: 0,
            last_epoch: 0,
        }
    }

    /// Records an epoch's value; `snapshot` is called only on strict improvement.
    pub fn observe(&mut self, epoch: usize, value: f64, snapshot: impl FnOnce() -> T) -> bool {
        self.last_epoch = epoch;
        let improved = match &self.best {
            None => true,
            Some((_, best, _)) => value < *best,
        };
        if improved {
            self.best = Some((epoch, value, snapshot()));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        if self.last_epoch >= self.max_epochs {
            return true;
        }
        self.last_epoch >= self.min_epochs && self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.0)
    }

    pub fn best_value(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.1)
    }

    pub fn into_best(self) -> Option<(usize, f64, T)> {
        self.best
    }
}
