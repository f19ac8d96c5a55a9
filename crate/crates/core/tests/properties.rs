mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siamrul::bench::{rmse_metric, rul_penalty, rul_score, scenario_seed, training_seed, Dist};
use siamrul::data::{batch_ranges, frame_refs, piecewise_rul_labels, split_validation, Subset};
use siamrul::scenarios::{apply_scenario, DataScenario, PairSampler};

proptest! {
    #[test]
    fn scenario_split_is_a_partition(
        lengths in prop::collection::vec(1usize..200, 1..40),
        percent in 1u32..=100,
        grade in 1u32..100,
        seed in any::<u64>(),
    ) {
        let train = common::flat_set(&lengths);
        let split = apply_scenario(&train, &DataScenario::custom(percent, grade, seed).unwrap()).unwrap();
        let n = lengths.len();
        let expected = if percent == 100 { n } else { (percent as usize * n / 100).clamp(1, n) };
        prop_assert_eq!(split.labeled.len(), expected);
        let mut ids: Vec<u32> = split.labeled.engine_ids();
        ids.extend(split.unlabeled.engine_ids());
        ids.sort_unstable();
        let kept: Vec<u32> = (1..=n as u32)
            .filter(|&id| split.labeled.engine_ids().contains(&id) || lengths[id as usize - 1] >= 2)
            .collect();
        prop_assert_eq!(ids, kept);
        for (s, &src) in split.unlabeled.series.iter().zip(&split.source_lengths) {
            prop_assert!(s.len() < src && !s.is_empty());
        }
    }

    #[test]
    fn labeled_engines_ignore_the_grade(
        lengths in prop::collection::vec(2usize..100, 2..30),
        percent in 1u32..100,
        g1 in 1u32..100,
        g2 in 1u32..100,
        seed in any::<u64>(),
    ) {
        let train = common::flat_set(&lengths);
        let a = apply_scenario(&train, &DataScenario::custom(percent, g1, seed).unwrap()).unwrap();
        let b = apply_scenario(&train, &DataScenario::custom(percent, g2, seed).unwrap()).unwrap();
        prop_assert_eq!(a.labeled, b.labeled);
        prop_assert_eq!(a.unlabeled.engine_ids(), b.unlabeled.engine_ids());
    }

    #[test]
    fn sampled_pairs_respect_constraints(
        lengths in prop::collection::vec(1usize..150, 1..6),
        w in 1usize..40,
        min_distance in 1usize..40,
        rul_max in 1.0f64..130.0,
        seed in any::<u64>(),
    ) {
        let set = common::flat_set(&lengths);
        let Ok(sampler) = PairSampler::new(&set.series, w, min_distance, rul_max) else {
            let possible = lengths.iter().any(|&l| l >= w + min_distance && min_distance as f64 <= rul_max);
            prop_assert!(!possible);
            return Ok(());
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = sampler.sample_batch(50, rul_max, &mut rng).unwrap();
        for (m, &t) in batch.meta.iter().zip(&batch.targets) {
            let len = lengths[m.engine_id as usize - 1];
            prop_assert!(w <= m.i && m.i < m.j && m.j <= len);
            prop_assert!(m.j - m.i >= min_distance && (m.j - m.i) as f64 <= rul_max);
            prop_assert!(t > 0.0 && t <= 1.0);
        }
    }

    #[test]
    fn metrics_are_consistent(
        pairs in prop::collection::vec((0.0f64..200.0, 0.0f64..200.0), 1..50),
    ) {
        let (pred, truth): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let rmse = rmse_metric(&pred, &truth).unwrap();
        let max = pred.iter().zip(&truth).map(|(p, t)| (p - t).abs()).fold(0.0, f64::max);
        prop_assert!(rmse >= 0.0 && rmse <= max + 1e-12);
        let score = rul_score(&pred, &truth).unwrap();
        prop_assert!(score >= 0.0);
        prop_assert_eq!(rmse_metric(&truth, &truth).unwrap(), 0.0);
    }

    #[test]
    fn late_predictions_cost_more(d in 0.01f64..100.0) {
        prop_assert!(rul_penalty(d) > rul_penalty(-d));
        prop_assert!(rul_penalty(d) > 0.0 && rul_penalty(-d) > 0.0);
    }

    #[test]
    fn seeds_separate_cells(base in any::<u64>(), percent in 1u32..100, rep in 0usize..100) {
        let s = scenario_seed(base, Subset::FD002, percent, rep);
        prop_assert_eq!(s, scenario_seed(base, Subset::FD002, percent, rep));
        prop_assert_ne!(s, scenario_seed(base, Subset::FD002, percent, rep + 1));
        prop_assert_ne!(s, scenario_seed(base, Subset::FD003, percent, rep));
        let t70 = training_seed(base, Subset::FD002, percent, Some(70), rep);
        prop_assert_ne!(t70, training_seed(base, Subset::FD002, percent, Some(80), rep));
        prop_assert_ne!(t70, training_seed(base, Subset::FD002, percent, None, rep));
    }

    #[test]
    fn quantized_samples_stay_on_grid(lo in 1u32..50, span in 1u32..100, seed in any::<u64>()) {
        let q = 0.25;
        let (lo, hi) = (lo as f64 * q, (lo + span) as f64 * q);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for d in [Dist::qu(lo, hi, q), Dist::qlogu(lo, hi, q)] {
            for _ in 0..50 {
                let v = d.sample(&mut rng);
                prop_assert!(lo <= v && v <= hi && (v / q).fract() == 0.0, "{v}");
            }
        }
    }

    #[test]
    fn batches_cover_every_index_once(n in 1usize..2000, bs in 2usize..600) {
        let ranges = batch_ranges(n, bs);
        prop_assert_eq!(ranges.first().unwrap().start, 0);
        prop_assert_eq!(ranges.last().unwrap().end, n);
        for w in ranges.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
        }
        prop_assert!(ranges.iter().all(|r| !r.is_empty()));
    }

    #[test]
    fn labels_are_capped_and_reach_zero(len in 1usize..400, cap in 1.0f64..200.0) {
        let l = piecewise_rul_labels(len, cap);
        prop_assert_eq!(l.len(), len);
        prop_assert_eq!(*l.last().unwrap(), 0.0);
        prop_assert!(l.iter().all(|&v| v <= cap));
        prop_assert!(l.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn frames_count_matches_lengths(lengths in prop::collection::vec(1usize..80, 1..10), w in 1usize..40) {
        let set = common::flat_set(&lengths);
        let want: usize = lengths.iter().map(|&l| (l + 1).saturating_sub(w)).sum();
        prop_assert_eq!(frame_refs(&set.series, w).len(), want);
    }

    #[test]
    fn validation_split_rounds(n in 2usize..100, seed in any::<u64>()) {
        let set = common::flat_set(&vec![10; n]);
        let (train, val) = split_validation(&set, 0.2, seed).unwrap();
        prop_assert_eq!(val.len(), ((n as f64 * 0.2).round() as usize).clamp(1, n - 1));
        prop_assert_eq!(train.len() + val.len(), n);
    }
}
