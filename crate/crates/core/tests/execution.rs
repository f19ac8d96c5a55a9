mod common;

use siamrul::data::{batch_input, frame_refs, Subset};
use siamrul::models::{ModelConfig, ModelState};
use siamrul::par::{with_workers, Execution};
use siamrul::scenarios::{apply_scenario, DataScenario};
use siamrul::trainers::{finetune_supervised, pretrain_self_supervised, TrainConfig};

#[test]
fn inference_is_identical_sequential_and_parallel() {
    let ds = common::small_dataset(1);
    let cfg = ModelConfig::new(15, 16, 0.0).unwrap();
    let state = ModelState::new(cfg, 3).unwrap();
    let refs = frame_refs(&ds.train.series, 15);
    let x = batch_input(&ds.train.series, &refs, 15);
    assert!(refs.len() > 256, "needs several inference chunks");
    let seq = state.predict(&x, Execution::Sequential).unwrap();
    let par = with_workers(4, || state.predict(&x, Execution::Parallel).unwrap());
    assert_eq!(seq, par);
    let seq = state.embed(&x, Execution::Sequential).unwrap();
    let par = with_workers(4, || state.embed(&x, Execution::Parallel).unwrap());
    assert_eq!(seq, par);
}

#[test]
fn training_does_not_depend_on_thread_count() {
    let ds = common::small_dataset(2);
    let arch = ModelConfig::new(15, 8, 0.0).unwrap();
    let split = apply_scenario(&ds.train, &DataScenario::custom(20, 90, 4).unwrap()).unwrap();
    let run = || {
        let pre = pretrain_self_supervised(
            &split,
            &ds.validation,
            &arch,
            &TrainConfig::self_supervised(Subset::FD004).with_epochs(2),
            ds.rul_max(),
        )
        .unwrap();
        let ft = finetune_supervised(
            Some(&pre.state),
            &split.labeled,
            &ds.validation,
            &arch,
            &TrainConfig::supervised(Subset::FD004).with_epochs(2),
            ds.rul_max(),
        )
        .unwrap();
        (pre.state.to_json().unwrap(), ft.state.to_json().unwrap(), ft.history.len())
    };
    let one = with_workers(1, run);
    let four = with_workers(4, run);
    assert_eq!(one, four);
}
