#![allow(dead_code)]

use siamrul::data::{prepare, synthetic, DatasetConfig, EngineSeries, PreparedDataset, Role, SeriesSet, Subset};

/// A small prepared FD004-like corpus (window 15).
pub fn small_dataset(seed: u64) -> PreparedDataset {
    let cfg = synthetic::SyntheticConfig {
        train_engines: 10,
        test_engines: 4,
        min_len: 50,
        max_len: 80,
        seed,
        ..synthetic::SyntheticConfig::default()
    };
    let corpus = synthetic::generate(Subset::FD004, &cfg).unwrap();
    prepare(&corpus.train, &corpus.test, DatasetConfig::for_subset(Subset::FD004)).unwrap()
}

/// Training set of constant-valued 14-channel series with the given lengths.
pub fn flat_set(lengths: &[usize]) -> SeriesSet {
    let series = lengths
        .iter()
        .enumerate()
        .map(|(k, &len)| EngineSeries::new(k as u32 + 1, 14, vec![k as f64; 14 * len], vec![0.0; 3 * len]).unwrap())
        .collect();
    SeriesSet::new(Subset::FD001, Role::Train, series).unwrap()
}
