//! Channel selection, min-max scaling, lifetime labels and engine-level validation split.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cmapss::{EngineSeries, Role, SeriesSet, RAW_SENSORS};
use crate::error::{Error, Result};

/// 1-based sensor numbers fed to the network, in input-channel order.
pub const SENSOR_CHANNELS: [usize; 14] = [2, 3, 4, 7, 8, 9, 11, 12, 13, 14, 15, 17, 20, 21];

pub const RUL_MAX: f64 = 125.0;

pub fn select_channels(set: &SeriesSet) -> Result<SeriesSet> {
    let mut out = set.clone();
    for s in &mut out.series {
        if s.channels < RAW_SENSORS {
            return Err(Error::Data(format!(
                "engine {} has {} sensor channels, need {RAW_SENSORS}",
                s.engine_id, s.channels
            )));
        }
        let mut readings = Vec::with_capacity(s.len() * SENSOR_CHANNELS.len());
        for t in 0..s.len() {
            let row = s.row(t);
            readings.extend(SENSOR_CHANNELS.iter().map(|&c| row[c - 1]));
        }
        s.readings = readings;
        s.channels = SENSOR_CHANNELS.len();
    }
    Ok(out)
}

/// Per-channel min-max scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Channels whose training range is empty; they scale to 0.
    pub constant: Vec<bool>,
}

impl Scaler {
    pub fn fit(train: &SeriesSet) -> Result<Self> {
        if train.role != Role::Train {
            return Err(Error::Data(format!("scaler must be fitted on training data, got {:?}", train.role)));
        }
        let channels = train.channels().ok_or_else(|| Error::Data("cannot fit scaler on an empty set".into()))?;
        let mut min = vec![f64::INFINITY; channels];
        let mut max = vec![f64::NEG_INFINITY; channels];
        for s in &train.series {
            for t in 0..s.len() {
                for (c, &v) in s.row(t).iter().enumerate() {
                    min[c] = min[c].min(v);
                    max[c] = max[c].max(v);
                }
            }
        }
        let constant: Vec<bool> = min.iter().zip(&max).map(|(a, b)| a == b).collect();
        for (c, _) in constant.iter().enumerate().filter(|(_, &k)| k) {
            warn!("channel {c} is constant on the training set; it will be scaled to 0");
        }
        Ok(Self { min, max, constant })
    }

    pub fn scale(&self, channel: usize, v: f64) -> f64 {
        if self.constant[channel] {
            0.0
        } else {
            (v - self.min[channel]) / (self.max[channel] - self.min[channel])
        }
    }

    /// Scales every reading; values outside the fitted range are not clipped.
    pub fn apply(&self, set: &SeriesSet) -> Result<SeriesSet> {
        let mut out = set.clone();
        for s in &mut out.series {
            if s.channels != self.min.len() {
                return Err(Error::Data(format!(
                    "engine {} has {} channels, scaler has {}",
                    s.engine_id,
                    s.channels,
                    self.min.len()
                )));
            }
            let ch = s.channels;
            for (i, v) in s.readings.iter_mut().enumerate() {
                *v = self.scale(i % ch, *v);
            }
        }
        Ok(out)
    }
}

/// Piecewise-linear lifetime labels of a run-to-failure series.
///
/// Step `i` (1-based) gets `min(rul_max, len - i)`, so the last step is labeled 0.
pub fn piecewise_rul_labels(len: usize, rul_max: f64) -> Vec<f64> {
    (1..=len).map(|i| rul_max.min((len - i) as f64)).collect()
}

/// Labels of a truncated series whose true remaining lifetime after the last step is `final_rul`.
pub fn truncated_rul_labels(len: usize, final_rul: f64, rul_max: f64) -> Vec<f64> {
    (1..=len).map(|i| rul_max.min(final_rul + (len - i) as f64)).collect()
}

/// Splits whole engines into `(train', validation)`.
///
/// The validation set receives `round(n * fraction)` engines, kept within `1..n`.
pub fn split_validation(train: &SeriesSet, fraction: f64, seed: u64) -> Result<(SeriesSet, SeriesSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction must lie in (0, 1), got {fraction}")));
    }
    let n = train.len();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 engines to split, got {n}")));
    }
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| train.series[i].engine_id);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val_idx: Vec<usize> = order[..n_val].to_vec();
    let mut train_idx: Vec<usize> = order[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let pick = |idx: &[usize], role: Role| -> Result<SeriesSet> {
        SeriesSet::new(train.subset, role, idx.iter().map(|&i| train.series[i].clone()).collect())
    };
    Ok((pick(&train_idx, Role::Train)?, pick(&val_idx, Role::Validation)?))
}

/// Replaces series shorter than `min_len` by a version left-padded with copies of its first step.
pub fn left_pad(series: &EngineSeries, min_len: usize) -> EngineSeries {
    let len = series.len();
    if len >= min_len {
        return series.clone();
    }
    let missing = min_len - len;
    let mut readings = Vec::with_capacity(min_len * series.channels);
    let mut ops = Vec::with_capacity(min_len * 3);
    for _ in 0..missing {
        readings.extend_from_slice(series.row(0));
        ops.extend_from_slice(&series.op_settings[..3]);
    }
    readings.extend_from_slice(&series.readings);
    ops.extend_from_slice(&series.op_settings);
    EngineSeries {
        engine_id: series.engine_id,
        channels: series.channels,
        readings,
        op_settings: ops,
    }
}
