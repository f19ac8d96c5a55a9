//! Synthetic run-to-failure corpus in CMAPSS layout.
//!
//! Every engine follows a hidden health index `h(t) = max(0, 1 - (L - t) / R)` that
//! is zero early in life and rises linearly to 1 at failure step `L` over an
//! engine-specific ramp of `R` steps. The fourteen network channels respond to `h` with fixed per-channel gains and signs,
//! an engine-specific offset, and Gaussian noise. The remaining sensors are constant.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cmapss::{write_cmapss, write_rul, EngineSeries, Role, SeriesSet, Subset, RAW_SENSORS};
use super::preprocess::SENSOR_CHANNELS;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub train_engines: usize,
    pub test_engines: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Range of the degradation ramp length: health rises linearly from 0 to 1 over
    /// the last `ramp` steps of a run.
    pub ramp: (f64, f64),
    /// Noise std relative to a channel's gain.
    pub noise: f64,
    /// Engine offset std relative to a channel's gain.
    pub offset: f64,
    /// Test series are cut at least this many steps into their life.
    pub min_test_len: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            train_engines: 60,
            test_engines: 30,
            min_len: 140,
            max_len: 260,
            ramp: (100.0, 200.0),
            noise: 0.15,
            offset: 0.1,
            min_test_len: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train: SeriesSet,
    pub test: SeriesSet,
}

struct Channel {
    base: f64,
    gain: f64,
}

fn engine<R: Rng>(id: u32, len: usize, channels: &[Channel], cfg: &SyntheticConfig, rng: &mut R) -> EngineSeries {
    let ramp = rng.random_range(cfg.ramp.0..=cfg.ramp.1);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let offsets: Vec<f64> = channels.iter().map(|c| c.gain * cfg.offset * unit.sample(rng)).collect();
    let mut readings = Vec::with_capacity(len * RAW_SENSORS);
    let mut ops = Vec::with_capacity(len * 3);
    for t in 1..=len {
        let health = (1.0 - (len - t) as f64 / ramp).max(0.0);
        for (c, ch) in channels.iter().enumerate() {
            let v = if SENSOR_CHANNELS.contains(&(c + 1)) {
                ch.base + ch.gain * health + offsets[c] + ch.gain.abs() * cfg.noise * unit.sample(rng)
            } else {
                ch.base
            };
            readings.push(v);
        }
        ops.extend([0.001 * unit.sample(rng), 0.0001 * unit.sample(rng), 100.0]);
    }
    EngineSeries::new(id, RAW_SENSORS, readings, ops).expect("consistent synthetic series")
}

/// Generates a training set of full runs and a test set of truncated runs with true RUL.
pub fn generate(subset: Subset, cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.min_len < cfg.min_test_len + 1 || cfg.max_len < cfg.min_len {
        return Err(Error::Config("synthetic lengths are inconsistent".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let channels: Vec<Channel> = (0..RAW_SENSORS)
        .map(|c| {
            let sign = if c % 3 == 0 { -1.0 } else { 1.0 };
            Channel {
                base: 100.0 + 37.0 * c as f64,
                gain: sign * rng.random_range(1.0..5.0),
            }
        })
        .collect();
    let train = (0..cfg.train_engines)
        .map(|i| {
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            engine(i as u32 + 1, len, &channels, cfg, &mut rng)
        })
        .collect();
    let mut test = Vec::with_capacity(cfg.test_engines);
    let mut rul = Vec::with_capacity(cfg.test_engines);
    for i in 0..cfg.test_engines {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let full = engine(i as u32 + 1, len, &channels, cfg, &mut rng);
        let cut = rng.random_range(cfg.min_test_len..len);
        rul.push((len - cut) as f64);
        test.push(full.prefix(cut));
    }
    Ok(SyntheticCorpus {
        train: SeriesSet::new(subset, Role::Train, train)?,
        test: SeriesSet::new(subset, Role::Test, test)?.with_test_rul(rul)?,
    })
}

/// Writes the corpus as `train_FDxxx.txt`, `test_FDxxx.txt` and `RUL_FDxxx.txt`.
pub fn write_dir(corpus: &SyntheticCorpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let subset = corpus.train.subset;
    fs::write(dir.join(subset.train_file()), write_cmapss(&corpus.train)?)?;
    fs::write(dir.join(subset.test_file()), write_cmapss(&corpus.test)?)?;
    let rul = corpus.test.test_rul.as_deref().unwrap_or_default();
    fs::write(dir.join(subset.rul_file()), write_rul(rul))?;
    Ok(())
}
