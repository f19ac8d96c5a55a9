//! The prepared dataset: selected, scaled and split series plus the settings that produced them.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cmapss::{parse_cmapss, parse_rul, Role, SeriesSet, Subset};
use super::preprocess::{left_pad, piecewise_rul_labels, select_channels, split_validation, Scaler, RUL_MAX, SENSOR_CHANNELS};
use super::window::{fill_channel_first, frame_refs, FrameRef};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub window: usize,
    pub rul_max: f64,
    pub validation_fraction: f64,
    pub split_seed: u64,
}

impl DatasetConfig {
    pub fn for_subset(subset: Subset) -> Self {
        Self {
            window: subset.window(),
            rul_max: RUL_MAX,
            validation_fraction: 0.2,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub schema_version: u32,
    pub subset: Subset,
    pub config: DatasetConfig,
    pub sensor_channels: Vec<usize>,
    pub scaler: Scaler,
    /// Training engines left after the validation split (scaled, 14 channels).
    pub train: SeriesSet,
    pub validation: SeriesSet,
    pub test: SeriesSet,
}

/// Reads `train_FDxxx.txt`, `test_FDxxx.txt` and `RUL_FDxxx.txt` from `dir`.
pub fn read_subset_dir(dir: &Path, subset: Subset) -> Result<(SeriesSet, SeriesSet)> {
    let open = |name: String| -> Result<BufReader<fs::File>> {
        let path = dir.join(&name);
        fs::File::open(&path)
            .map(BufReader::new)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
    };
    let train = parse_cmapss(open(subset.train_file())?, subset, Role::Train)?;
    let test = parse_cmapss(open(subset.test_file())?, subset, Role::Test)?;
    let rul = parse_rul(open(subset.rul_file())?)?;
    let test = test.with_test_rul(rul)?;
    Ok((train, test))
}

/// Selects channels, splits off validation engines, fits the scaler on the remaining
/// training engines and scales all three sets.
pub fn prepare(train_raw: &SeriesSet, test_raw: &SeriesSet, config: DatasetConfig) -> Result<PreparedDataset> {
    test_raw.validate()?;
    if config.window < 3 {
        return Err(Error::Config(format!("window must be at least 3, got {}", config.window)));
    }
    let train = select_channels(train_raw)?;
    let test = select_channels(test_raw)?;
    let (train, validation) = split_validation(&train, config.validation_fraction, config.split_seed)?;
    let scaler = Scaler::fit(&train)?;
    Ok(PreparedDataset {
        schema_version: DATASET_SCHEMA_VERSION,
        subset: train_raw.subset,
        sensor_channels: SENSOR_CHANNELS.to_vec(),
        train: scaler.apply(&train)?,
        validation: scaler.apply(&validation)?,
        test: scaler.apply(&test)?,
        scaler,
        config,
    })
}

impl PreparedDataset {
    pub fn window(&self) -> usize {
        self.config.window
    }

    pub fn rul_max(&self) -> f64 {
        self.config.rul_max
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read dataset {}: {e}", path.display())))?;
        let ds: PreparedDataset = serde_json::from_str(&text)?;
        if ds.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::Data(format!("unsupported dataset schema {}", ds.schema_version)));
        }
        Ok(ds)
    }

    /// Final window of every test engine with its true lifetime capped at `rul_max`.
    /// Series shorter than the window are left-padded with their first step.
    pub fn test_final_windows(&self) -> Result<(Vec<u32>, Tensor, Vec<f64>)> {
        let w = self.window();
        let rul = self
            .test
            .test_rul
            .as_ref()
            .ok_or_else(|| Error::Data("test set has no true RUL values".into()))?;
        let ch = self.sensor_channels.len();
        let mut data = vec![0.0; self.test.len() * ch * w];
        for (k, s) in self.test.series.iter().enumerate() {
            let padded = left_pad(s, w);
            fill_channel_first(&padded, padded.len(), w, &mut data[k * ch * w..(k + 1) * ch * w]);
        }
        let truths = rul.iter().map(|&r| r.min(self.rul_max())).collect();
        Ok((self.test.engine_ids(), Tensor::new(vec![self.test.len(), ch, w], data)?, truths))
    }
}

/// Windows of run-to-failure series with their piecewise labels.
#[derive(Debug, Clone)]
pub struct LabeledFrames<'a> {
    pub series: &'a [super::cmapss::EngineSeries],
    pub refs: Vec<FrameRef>,
    pub labels: Vec<f64>,
    pub window: usize,
}

impl<'a> LabeledFrames<'a> {
    pub fn new(series: &'a [super::cmapss::EngineSeries], window: usize, rul_max: f64) -> Self {
        let refs = frame_refs(series, window);
        let per_series: Vec<Vec<f64>> = series.iter().map(|s| piecewise_rul_labels(s.len(), rul_max)).collect();
        let labels = refs.iter().map(|r| per_series[r.series][r.end - 1]).collect();
        Self {
            series,
            refs,
            labels,
            window,
        }
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }
}
