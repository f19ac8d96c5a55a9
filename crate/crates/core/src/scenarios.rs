//! Data scenarios and siamese pair sampling.
//!
//! A scenario keeps a fraction of the training engines as labeled run-to-failure
//! series and truncates the rest to a prefix, the "grade of degradation". Pairs for
//! self-supervised pre-training are two windows of the same engine ending at steps
//! `i < j`; their target is the normalized gap `(j - i) / rul_max`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{batch_input, EngineSeries, FrameRef, Role, SeriesSet, Subset};
use crate::error::{Error, Result};

pub const PERCENT_GRID: [u32; 5] = [2, 10, 20, 40, 100];
pub const GRADE_GRID: [u32; 5] = [40, 60, 70, 80, 90];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataScenario {
    pub percent_labeled: u32,
    pub grade: u32,
    pub seed: u64,
}

impl DataScenario {
    /// A scenario on the default grids.
    pub fn new(percent_labeled: u32, grade: u32, seed: u64) -> Result<Self> {
        if !PERCENT_GRID.contains(&percent_labeled) {
            return Err(Error::Scenario(format!(
                "percent labeled {percent_labeled} is not on the grid {PERCENT_GRID:?}"
            )));
        }
        if percent_labeled != 100 && !GRADE_GRID.contains(&grade) {
            return Err(Error::Scenario(format!("grade {grade} is not on the grid {GRADE_GRID:?}")));
        }
        Self::custom(percent_labeled, grade, seed)
    }

    /// Any percent in `1..=100` and grade in `1..100`.
    pub fn custom(percent_labeled: u32, grade: u32, seed: u64) -> Result<Self> {
        if !(1..=100).contains(&percent_labeled) {
            return Err(Error::Scenario(format!("percent labeled must be in 1..=100, got {percent_labeled}")));
        }
        if grade >= 100 {
            return Err(Error::Scenario(
                "a grade of degradation of 100% would make unlabeled engines failed ones".into(),
            ));
        }
        if grade == 0 && percent_labeled != 100 {
            return Err(Error::Scenario("grade of degradation must be positive".into()));
        }
        Ok(Self {
            percent_labeled,
            grade,
            seed,
        })
    }

    pub fn labeled_count(&self, n_engines: usize) -> usize {
        (self.percent_labeled as usize * n_engines / 100).clamp(1, n_engines.max(1))
    }
}

/// Labeled and unlabeled portions of a training set under one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSplit {
    pub scenario: DataScenario,
    pub labeled: SeriesSet,
    pub unlabeled: SeriesSet,
    /// Original length of each unlabeled series, aligned with `unlabeled.series`.
    pub source_lengths: Vec<usize>,
}

impl ScenarioSplit {
    /// Labeled and unlabeled series together, for label-free pre-training.
    pub fn all_series(&self) -> Vec<EngineSeries> {
        self.labeled.series.iter().chain(&self.unlabeled.series).cloned().collect()
    }

    pub fn manifest(&self, subset: Subset) -> ScenarioManifest {
        ScenarioManifest {
            subset,
            percent_labeled: self.scenario.percent_labeled,
            grade: self.scenario.grade,
            seed: self.scenario.seed,
            labeled_engines: self.labeled.engine_ids(),
            unlabeled_engines: self.unlabeled.engine_ids(),
            truncated_lengths: self.unlabeled.series.iter().map(EngineSeries::len).collect(),
            source_lengths: self.source_lengths.clone(),
        }
    }
}

/// Audit record of a scenario split, written next to results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub subset: Subset,
    pub percent_labeled: u32,
    pub grade: u32,
    pub seed: u64,
    pub labeled_engines: Vec<u32>,
    pub unlabeled_engines: Vec<u32>,
    pub truncated_lengths: Vec<usize>,
    pub source_lengths: Vec<usize>,
}

/// Splits `train` into labeled engines and truncated unlabeled engines.
///
/// The labeled subset depends only on the engine ids, the percentage and the seed.
/// Truncation keeps `floor(grade * len / 100)` steps, at least one and always fewer
/// than `len`; single-step series cannot be truncated and are dropped.
pub fn apply_scenario(train: &SeriesSet, scenario: &DataScenario) -> Result<ScenarioSplit> {
    if train.role != Role::Train {
        return Err(Error::Scenario(format!("scenarios apply to training data, got {:?}", train.role)));
    }
    if train.is_empty() {
        return Err(Error::Scenario("training set is empty".into()));
    }
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| train.series[i].engine_id);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(scenario.seed));
    let n_labeled = if scenario.percent_labeled == 100 { n } else { scenario.labeled_count(n) };
    let mut labeled_idx = order[..n_labeled].to_vec();
    let mut unlabeled_idx = order[n_labeled..].to_vec();
    labeled_idx.sort_unstable();
    unlabeled_idx.sort_unstable();

    let labeled = labeled_idx.iter().map(|&i| train.series[i].clone()).collect();
    let mut unlabeled = Vec::with_capacity(unlabeled_idx.len());
    let mut source_lengths = Vec::with_capacity(unlabeled_idx.len());
    for &i in &unlabeled_idx {
        let s = &train.series[i];
        let len = s.len();
        if len < 2 {
            continue;
        }
        let keep = (scenario.grade as usize * len / 100).clamp(1, len - 1);
        unlabeled.push(s.prefix(keep));
        source_lengths.push(len);
    }
    Ok(ScenarioSplit {
        scenario: *scenario,
        labeled: SeriesSet::new(train.subset, Role::Train, labeled)?,
        unlabeled: SeriesSet::new(train.subset, Role::Train, unlabeled)?,
        source_lengths,
    })
}

/// Normalized time gap between window ends `i < j` with `j - i <= rul_max`.
pub fn relative_rul_target(i: usize, j: usize, rul_max: f64) -> Result<f64> {
    if i >= j {
        return Err(Error::Sampling(format!("pair requires i < j, got i={i}, j={j}")));
    }
    let gap = (j - i) as f64;
    if gap > rul_max {
        return Err(Error::Sampling(format!("gap {gap} exceeds rul_max {rul_max}")));
    }
    Ok(gap / rul_max)
}

/// Siamese training batch: `anchors[k]` ends at `i`, `partners[k]` at `j` of the same engine.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub anchors: Tensor,
    pub partners: Tensor,
    pub targets: Vec<f64>,
    pub meta: Vec<PairMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairMeta {
    pub engine_id: u32,
    pub i: usize,
    pub j: usize,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Anchors followed by partners as one `[2B, C, w]` tensor, for a single shared forward pass.
    pub fn stacked(&self) -> Tensor {
        let mut shape = self.anchors.shape().to_vec();
        shape[0] *= 2;
        let mut data = self.anchors.data().to_vec();
        data.extend_from_slice(self.partners.data());
        Tensor::new(shape, data).expect("anchors and partners share a shape")
    }
}

/// Window-end pairs available within the engines of a set.
///
/// For an engine with `n` window ends the admissible gaps are
/// `min_distance..=min(rul_max, n - 1)`, and gap `g` occurs at `n - g` positions.
#[derive(Debug, Clone)]
pub struct PairSampler<'a> {
    series: &'a [EngineSeries],
    window: usize,
    min_distance: usize,
    max_gap: usize,
    /// Eligible series with their cumulative pair-count table, indexed by gap offset.
    eligible: Vec<(usize, Vec<u64>)>,
}

impl<'a> PairSampler<'a> {
    pub fn new(series: &'a [EngineSeries], window: usize, min_distance: usize, rul_max: f64) -> Result<Self> {
        let min_distance = min_distance.max(1);
        let max_gap = rul_max.floor() as usize;
        if min_distance > max_gap {
            return Err(Error::Sampling(format!(
                "minimum distance {min_distance} exceeds rul_max {rul_max}"
            )));
        }
        let mut eligible = Vec::new();
        for (k, s) in series.iter().enumerate() {
            let ends = (s.len() + 1).saturating_sub(window);
            if ends == 0 {
                continue;
            }
            let top = max_gap.min(ends - 1);
            if top < min_distance {
                continue;
            }
            let mut cum = Vec::with_capacity(top - min_distance + 1);
            let mut acc = 0u64;
            for g in min_distance..=top {
                acc += (ends - g) as u64;
                cum.push(acc);
            }
            eligible.push((k, cum));
        }
        if eligible.is_empty() {
            let shortest_needed = window + min_distance;
            let longest = series.iter().map(EngineSeries::len).max().unwrap_or(0);
            return Err(Error::Sampling(format!(
                "no engine admits a pair: need at least {shortest_needed} steps for window {window} and \
                 minimum distance {min_distance}, longest usable series has {longest}"
            )));
        }
        Ok(Self {
            series,
            window,
            min_distance,
            max_gap,
            eligible,
        })
    }

    pub fn eligible_engines(&self) -> Vec<u32> {
        self.eligible.iter().map(|(k, _)| self.series[*k].engine_id).collect()
    }

    pub fn rul_max_gap(&self) -> usize {
        self.max_gap
    }

    /// One pair: uniform engine, then uniform over that engine's admissible `(i, j)`.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize, usize) {
        let (k, cum) = &self.eligible[rng.random_range(0..self.eligible.len())];
        let total = *cum.last().expect("eligible engines have pairs");
        let u = rng.random_range(0..total);
        let offset = cum.partition_point(|&c| c <= u);
        let gap = self.min_distance + offset;
        let before = if offset == 0 { 0 } else { cum[offset - 1] };
        let pos = (u - before) as usize;
        let i = self.window + pos;
        (*k, i, i + gap)
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rul_max: f64, rng: &mut R) -> Result<PairBatch> {
        if batch_size == 0 {
            return Err(Error::Sampling("pair batch size must be positive".into()));
        }
        let mut anchors = Vec::with_capacity(batch_size);
        let mut partners = Vec::with_capacity(batch_size);
        let mut targets = Vec::with_capacity(batch_size);
        let mut meta = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let (k, i, j) = self.sample_pair(rng);
            targets.push(relative_rul_target(i, j, rul_max)?);
            anchors.push(FrameRef { series: k, end: i });
            partners.push(FrameRef { series: k, end: j });
            meta.push(PairMeta {
                engine_id: self.series[k].engine_id,
                i,
                j,
            });
        }
        Ok(PairBatch {
            anchors: batch_input(self.series, &anchors, self.window),
            partners: batch_input(self.series, &partners, self.window),
            targets,
            meta,
        })
    }
}

/// Samples `batch_size` pairs from `series`.
pub fn sample_pair_batch<R: Rng + ?Sized>(
    series: &[EngineSeries],
    window: usize,
    batch_size: usize,
    min_distance: usize,
    rul_max: f64,
    rng: &mut R,
) -> Result<PairBatch> {
    PairSampler::new(series, window, min_distance, rul_max)?.sample_batch(batch_size, rul_max, rng)
}

/// A fixed pair set for monitoring pre-training loss; identical on every call with the same seed.
pub fn validation_pairs(
    validation: &SeriesSet,
    window: usize,
    count: usize,
    min_distance: usize,
    rul_max: f64,
    seed: u64,
) -> Result<PairBatch> {
    if count == 0 {
        return Err(Error::Sampling("validation pair count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_pair_batch(&validation.series, window, count, min_distance, rul_max, &mut rng)
}
