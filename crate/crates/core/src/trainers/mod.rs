//! Pre-training procedures and supervised fine-tuning, each with early stopping.

mod config;
mod monitor;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{TrainConfig, DEFAULT_PATIENCE, MAX_EPOCH_FACTOR};
pub use monitor::{write_history, EarlyStopMonitor, EpochRecord};

use crate::autodiff::{AdamConfig, AdamState, ParamStore, Tensor, Var};
use crate::data::{batch_input, batch_ranges, frame_refs, EngineSeries, LabeledFrames, SeriesSet};
use crate::error::{Error, Result};
use crate::models::rbm::{cd1_gradients, frame_patches, reconstruction_mse, RbmView};
use crate::models::{
    apply_bn_updates, decoder, feature_extractor, init_decoder, init_rbm, regression_head, siamese_distance, Forward,
    ModelConfig, ModelState, Pretraining,
};
use crate::par::Execution;
use crate::scenarios::{validation_pairs, PairBatch, PairSampler, ScenarioSplit};

/// Best-epoch state and the full per-epoch history of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Monitored validation value at `best_epoch`.
    pub best_value: f64,
    pub metric: &'static str,
}

const VALIDATION_PAIR_SALT: u64 = 0x005e_ed0f_7a1d;

fn check_finite(epoch: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            epoch,
            detail: format!("{what} became {v}"),
        })
    }
}

/// One optimizer step: builds a loss in train mode, backpropagates, applies Adam and
/// the batchnorm running-statistics updates. Returns the loss value.
fn train_step<F>(state: &mut ModelState, adam: &mut AdamState, rng: &mut ChaCha8Rng, epoch: usize, build: F) -> Result<f64>
where
    F: FnOnce(&mut Forward<'_>) -> Result<Var>,
{
    let (graph, loss, updates) = {
        let mut fw = Forward::train(&state.store, rng);
        let loss = build(&mut fw)?;
        let updates = fw.take_bn_updates();
        (fw.graph, loss, updates)
    };
    let value = graph.value(loss).item();
    check_finite(epoch, "training loss", value)?;
    state.store.zero_grad();
    graph.backward(loss, &mut state.store)?;
    adam.step(&mut state.store)?;
    apply_bn_updates(&mut state.store, &updates)?;
    Ok(value)
}

/// Drives the epoch loop with early stopping and restores the best parameters.
fn run_with_early_stopping<F>(
    mut state: ModelState,
    cfg: &TrainConfig,
    metric: &'static str,
    mut epoch_fn: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&mut ModelState, usize) -> Result<(f64, f64)>,
{
    let mut monitor: EarlyStopMonitor<ParamStore> =
        EarlyStopMonitor::new(metric, cfg.min_epochs, cfg.max_epochs, cfg.patience);
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let (train_loss, validation) = epoch_fn(&mut state, epoch)?;
        check_finite(epoch, metric, validation)?;
        log::debug!("{metric} epoch {epoch}: train {train_loss:.6} validation {validation:.6}");
        history.push(EpochRecord::new(epoch, train_loss, validation));
        monitor.observe(epoch, validation, || state.store.clone());
        if monitor.should_stop() {
            break;
        }
    }
    let (best_epoch, best_value, store) = monitor
        .into_best()
        .ok_or_else(|| Error::Config("training ran no epochs".into()))?;
    state.store = store;
    Ok(TrainOutcome {
        state,
        history,
        best_epoch,
        best_value,
        metric,
    })
}

fn arch_with_dropout(arch: &ModelConfig, cfg: &TrainConfig) -> Result<ModelConfig> {
    cfg.validate()?;
    let mut a = arch.clone();
    a.dropout = cfg.dropout;
    a.validate()?;
    Ok(a)
}

/// Mean squared error between pair targets and eval-mode siamese distances.
pub fn pair_mse(state: &ModelState, pairs: &PairBatch, exec: Execution) -> Result<f64> {
    let a = state.embed(&pairs.anchors, exec)?;
    let b = state.embed(&pairs.partners, exec)?;
    let mut total = 0.0;
    for ((ea, eb), t) in a.iter().zip(&b).zip(&pairs.targets) {
        let na = norm(ea, "siamese_distance")?;
        let nb = norm(eb, "siamese_distance")?;
        let d: f64 = ea.iter().zip(eb).map(|(x, y)| (x / na - y / nb).powi(2)).sum();
        total += (t - d).powi(2);
    }
    Ok(total / pairs.len() as f64)
}

fn norm(v: &[f64], op: &'static str) -> Result<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::DegenerateInput {
            op,
            detail: "zero embedding".into(),
        });
    }
    Ok(n)
}

/// The fixed validation pair set monitored by siamese pre-training under `cfg`.
pub fn frozen_validation_pairs(validation: &SeriesSet, window: usize, cfg: &TrainConfig, rul_max: f64) -> Result<PairBatch> {
    validation_pairs(
        validation,
        window,
        cfg.validation_pairs,
        cfg.min_distance,
        rul_max,
        cfg.seed ^ VALIDATION_PAIR_SALT,
    )
}

/// Siamese pre-training of the extractor on the relative-lifetime pre-text task.
///
/// Every epoch draws `ceil(frames / batch_size)` pair batches from the labeled and
/// unlabeled series. The monitored value is the MSE on a frozen validation pair set.
pub fn pretrain_self_supervised(
    split: &ScenarioSplit,
    validation: &SeriesSet,
    arch: &ModelConfig,
    cfg: &TrainConfig,
    rul_max: f64,
) -> Result<TrainOutcome> {
    let arch = arch_with_dropout(arch, cfg)?;
    let w = arch.window;
    let series = split.all_series();
    let sampler = PairSampler::new(&series, w, cfg.min_distance, rul_max)?;
    let val = frozen_validation_pairs(validation, w, cfg, rul_max)?;
    let batches = frame_refs(&series, w).len().div_ceil(cfg.batch_size).max(1);

    let mut state = ModelState::new(arch.clone(), cfg.seed)?;
    state.pretraining = Pretraining::SelfSupervised;
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate), &state.store, state.store.trainable_with_prefix("f."));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));

    run_with_early_stopping(state, cfg, "validation_pair_mse", |state, epoch| {
        let mut total = 0.0;
        for _ in 0..batches {
            let pb = sampler.sample_batch(cfg.batch_size, rul_max, &mut rng)?;
            let b = pb.len();
            let x = pb.stacked();
            let targets = Tensor::vector(pb.targets);
            total += train_step(state, &mut adam, &mut rng, epoch, |fw| {
                let x = fw.graph.constant(x);
                let emb = feature_extractor(fw, &arch, x)?.embedding;
                let ea = fw.graph.slice_rows(emb, 0, b)?;
                let eb = fw.graph.slice_rows(emb, b, b)?;
                let d = siamese_distance(&mut fw.graph, ea, eb)?;
                let t = fw.graph.constant(targets);
                fw.graph.mse_loss(d, t)
            })?;
        }
        Ok((total / batches as f64, pair_mse(state, &val, Execution::default())?))
    })
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Eval-mode reconstruction MSE of the autoencoder over `frames`.
fn reconstruction_error(state: &ModelState, frames: &Tensor) -> Result<f64> {
    let cfg = state.config.clone();
    let sq = state.eval_chunks(frames, Execution::default(), |fw, x| {
        let emb = feature_extractor(fw, &cfg, x)?.embedding;
        let rec = decoder(fw, &cfg, emb)?;
        let total: f64 = fw
            .graph
            .value(rec)
            .data()
            .iter()
            .zip(fw.graph.value(x).data())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        Ok(vec![total])
    })?;
    Ok(sq.iter().flatten().sum::<f64>() / frames.len().max(1) as f64)
}

/// Autoencoder pre-training on all frames of the labeled and unlabeled series. The
/// decoder is dropped from the returned state.
pub fn pretrain_autoencoder(
    split: &ScenarioSplit,
    validation: &SeriesSet,
    arch: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let arch = arch_with_dropout(arch, cfg)?;
    let w = arch.window;
    let series = split.all_series();
    let refs = frame_refs(&series, w);
    if refs.len() < 2 {
        return Err(Error::Data(format!("autoencoder pre-training needs at least two frames of width {w}")));
    }
    let val_refs = frame_refs(&validation.series, w);
    if val_refs.is_empty() {
        return Err(Error::Data("validation set has no frames".into()));
    }
    let val_frames = batch_input(&validation.series, &val_refs, w);

    let mut state = ModelState::new(arch.clone(), cfg.seed)?;
    state.pretraining = Pretraining::Autoencoder;
    init_decoder(&mut state.store, &arch, cfg.seed);
    let mut params = state.store.trainable_with_prefix("f.");
    params.extend(state.store.trainable_with_prefix("d."));
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate), &state.store, params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));

    let mut out = run_with_early_stopping(state, cfg, "validation_reconstruction_mse", |state, epoch| {
        let order = shuffled(refs.len(), &mut rng);
        let ranges = batch_ranges(order.len(), cfg.batch_size);
        let mut total = 0.0;
        for r in &ranges {
            let batch: Vec<_> = order[r.clone()].iter().map(|&k| refs[k]).collect();
            let x = batch_input(&series, &batch, w);
            total += train_step(state, &mut adam, &mut rng, epoch, |fw| {
                let x = fw.graph.constant(x);
                let emb = feature_extractor(fw, &arch, x)?.embedding;
                let rec = decoder(fw, &arch, emb)?;
                fw.graph.mse_loss(rec, x)
            })?;
        }
        Ok((total / ranges.len() as f64, reconstruction_error(state, &val_frames)?))
    })?;
    out.state.strip_auxiliary();
    Ok(out)
}

fn series_patches(series: &[EngineSeries]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for s in series {
        if s.len() < 3 {
            continue;
        }
        let mut frame = vec![0.0; s.channels * s.len()];
        crate::data::window::fill_channel_first(s, s.len(), s.len(), &mut frame);
        out.extend(frame_patches(&frame, s.channels, s.len()));
    }
    out
}

/// Layer-wise RBM pre-training of the first convolution with CD-1. Every other
/// extractor parameter keeps its seeded random initialization.
pub fn pretrain_rbm(
    split: &ScenarioSplit,
    validation: &SeriesSet,
    arch: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let arch = arch_with_dropout(arch, cfg)?;
    let patches = series_patches(&split.all_series());
    if patches.is_empty() {
        return Err(Error::Data("RBM pre-training needs series of at least three steps".into()));
    }
    let val_patches = series_patches(&validation.series);
    if val_patches.is_empty() {
        return Err(Error::Data("validation set has no RBM patches".into()));
    }
    let mut state = ModelState::new(arch.clone(), cfg.seed)?;
    state.pretraining = Pretraining::Rbm;
    init_rbm(&mut state.store, &arch, cfg.seed);
    let ids = [
        state.store.id("rbm.weight")?,
        state.store.id("rbm.hidden_bias")?,
        state.store.id("rbm.visible_bias")?,
    ];
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate), &state.store, ids.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3));

    let mut out = run_with_early_stopping(state, cfg, "validation_rbm_reconstruction_mse", |state, epoch| {
        let order = shuffled(patches.len(), &mut rng);
        let mut sq = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Vec<f64>> = chunk.iter().map(|&k| patches[k].clone()).collect();
            let g = {
                let view = RbmView::from_store(&state.store)?;
                cd1_gradients(&view, &batch, &mut rng)
            };
            sq += g.sq_error;
            count += g.elements;
            state.store.zero_grad();
            for (id, grad) in ids.iter().zip([&g.weight, &g.hidden_bias, &g.visible_bias]) {
                state.store.accumulate_grad(*id, grad);
            }
            adam.step(&mut state.store)?;
        }
        let train = sq / count as f64;
        check_finite(epoch, "RBM reconstruction error", train)?;
        let view = RbmView::from_store(&state.store)?;
        Ok((train, reconstruction_mse(&view, &val_patches)))
    })?;
    let store = &mut out.state.store;
    let w = store.get("rbm.weight")?.clone();
    let b = store.get("rbm.hidden_bias")?.clone();
    store.insert("f.block1.conv.weight", w, true);
    store.insert("f.block1.conv.bias", b, true);
    out.state.strip_auxiliary();
    Ok(out)
}

/// Validation RMSE in cycles over every validation frame.
pub fn validation_rmse(state: &ModelState, frames: &Tensor, labels: &[f64], exec: Execution) -> Result<f64> {
    let pred = state.predict(frames, exec)?;
    let mse = pred.iter().zip(labels).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / labels.len() as f64;
    Ok(mse.sqrt())
}

/// Supervised training of extractor and head with the RMSE loss.
///
/// With `init` the extractor starts from the given pre-trained parameters and the head
/// is drawn fresh; without it every parameter is random (the baseline).
pub fn finetune_supervised(
    init: Option<&ModelState>,
    labeled: &SeriesSet,
    validation: &SeriesSet,
    arch: &ModelConfig,
    cfg: &TrainConfig,
    rul_max: f64,
) -> Result<TrainOutcome> {
    let arch = arch_with_dropout(arch, cfg)?;
    let w = arch.window;
    if labeled.is_empty() {
        return Err(Error::Data("fine-tuning needs at least one labeled engine".into()));
    }
    let train = LabeledFrames::new(&labeled.series, w, rul_max);
    if train.len() < 2 {
        return Err(Error::Data(format!("labeled engines yield {} frames of width {w}", train.len())));
    }
    let val = LabeledFrames::new(&validation.series, w, rul_max);
    if val.is_empty() {
        return Err(Error::Data("validation set has no frames".into()));
    }
    let val_frames = batch_input(val.series, &val.refs, w);

    let state = match init {
        Some(pre) => {
            if pre.config.fingerprint() != arch.fingerprint() {
                return Err(Error::Checkpoint(format!(
                    "pre-trained architecture {} does not match {}",
                    pre.config.fingerprint(),
                    arch.fingerprint()
                )));
            }
            pre.for_finetuning(cfg.seed, cfg.dropout)?
        }
        None => ModelState::new(arch.clone(), cfg.seed)?,
    };
    let normalize = state.normalize_embeddings();
    let mut params = state.store.trainable_with_prefix("f.");
    params.extend(state.store.trainable_with_prefix("g."));
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate), &state.store, params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(4));

    run_with_early_stopping(state, cfg, "validation_rmse", |state, epoch| {
        let order = shuffled(train.len(), &mut rng);
        let ranges = batch_ranges(order.len(), cfg.batch_size);
        let mut total = 0.0;
        for r in &ranges {
            let refs: Vec<_> = order[r.clone()].iter().map(|&k| train.refs[k]).collect();
            let labels: Vec<f64> = order[r.clone()].iter().map(|&k| train.labels[k]).collect();
            let x = batch_input(&labeled.series, &refs, w);
            total += train_step(state, &mut adam, &mut rng, epoch, |fw| {
                let x = fw.graph.constant(x);
                let emb = feature_extractor(fw, &arch, x)?.embedding;
                let y = regression_head(fw, emb, normalize)?;
                let t = fw.graph.constant(Tensor::vector(labels));
                fw.graph.rmse_loss(y, t)
            })?;
        }
        let v = validation_rmse(state, &val_frames, &val.labels, Execution::default())?;
        Ok((total / ranges.len() as f64, v))
    })
}

/// Runs the pre-training stage for `method`; `None` for the baseline.
pub fn pretrain(
    method: Pretraining,
    split: &ScenarioSplit,
    validation: &SeriesSet,
    arch: &ModelConfig,
    cfg: &TrainConfig,
    rul_max: f64,
) -> Result<Option<TrainOutcome>> {
    Ok(match method {
        Pretraining::None => None,
        Pretraining::SelfSupervised => Some(pretrain_self_supervised(split, validation, arch, cfg, rul_max)?),
        Pretraining::Autoencoder => Some(pretrain_autoencoder(split, validation, arch, cfg)?),
        Pretraining::Rbm => Some(pretrain_rbm(split, validation, arch, cfg)?),
    })
}
