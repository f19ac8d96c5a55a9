//! Acceptance suite: one line per criterion, non-zero exit status if any fails.
//!
//! Run everything with `cargo test -p siamrul-cli --test acceptance`, or a subset by
//! passing name fragments after `--`, e.g. `-- C3 C9`.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siamrul::autodiff::{Graph, Padding, Tensor, Var};
use siamrul::bench::{
    cell_scenario, rmse_metric, rul_penalty, rul_score, train_cell, CellSpec, Dist, EpochBudget, MetricReport,
    RunSettings,
};
use siamrul::data::{
    batch_input, prepare, synthetic, DatasetConfig, EngineSeries, LabeledFrames, PreparedDataset, Role, SeriesSet,
    Subset,
};
use siamrul::models::{decoder, feature_extractor, init_decoder, siamese_distance, Forward, ModelConfig, ModelState, Pretraining};
use siamrul::par::Execution;
use siamrul::scenarios::{
    apply_scenario, relative_rul_target, DataScenario, PairSampler, GRADE_GRID, PERCENT_GRID,
};
use siamrul::trainers::{
    finetune_supervised, frozen_validation_pairs, pair_mse, pretrain_autoencoder, pretrain_rbm,
    pretrain_self_supervised, validation_rmse, TrainConfig, TrainOutcome, DEFAULT_PATIENCE,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T>(r: siamrul::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values with magnitude in `[0.1, 2)` and random sign, away from any kink at zero.
fn off_zero_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

// ---------------------------------------------------------------- C1

type Build = dyn Fn(&mut Graph, &[Var]) -> siamrul::Result<Var>;

/// `sum(f(inputs) * r)` for a fixed random `r`, returned with the input variables.
fn weighted_loss(g: &mut Graph, inputs: &[Tensor], build: &Build, r_seed: u64) -> siamrul::Result<(Var, Vec<Var>)> {
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let y = build(g, &vars)?;
    let shape = g.shape(y).to_vec();
    let r = uniform_tensor(&mut ChaCha8Rng::seed_from_u64(r_seed), &shape, -1.0, 1.0);
    let r = g.constant(r);
    let prod = g.mul(y, r)?;
    Ok((g.sum(prod), vars))
}

/// Largest relative error between analytic and central-difference gradients.
fn gradcheck(inputs: &[Tensor], build: &Build, r_seed: u64) -> siamrul::Result<f64> {
    const EPS: f64 = 1e-5;
    const FLOOR: f64 = 1e-4;
    let mut g = Graph::new();
    let (loss, vars) = weighted_loss(&mut g, inputs, build, r_seed)?;
    let grads = g.gradients(loss)?;
    let eval = |inputs: &[Tensor]| -> siamrul::Result<f64> {
        let mut g = Graph::new();
        let (loss, _) = weighted_loss(&mut g, inputs, build, r_seed)?;
        Ok(g.value(loss).item())
    };
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for (e, &a) in analytic.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += EPS;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= EPS;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * EPS);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

type CaseGen = fn(&mut ChaCha8Rng) -> (Vec<Tensor>, Box<Build>);

fn conv_case(rng: &mut ChaCha8Rng, padding: Padding, transpose: bool) -> (Vec<Tensor>, Box<Build>) {
    let (b, ci, co) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3));
    let t = rng.random_range(3..=7);
    let x = if rng.random_bool(0.3) {
        uniform_tensor(rng, &[ci, t], -1.0, 1.0)
    } else {
        uniform_tensor(rng, &[b, ci, t], -1.0, 1.0)
    };
    let w_shape = if transpose { [ci, co, 3] } else { [co, ci, 3] };
    let w = uniform_tensor(rng, &w_shape, -1.0, 1.0);
    let bias = uniform_tensor(rng, &[co], -1.0, 1.0);
    let build: Box<Build> = if transpose {
        Box::new(move |g, v| g.conv_transpose1d(v[0], v[1], v[2], padding))
    } else {
        Box::new(move |g, v| g.conv1d(v[0], v[1], v[2], padding))
    };
    (vec![x, w, bias], build)
}

fn bn_input(rng: &mut ChaCha8Rng) -> (Tensor, usize) {
    let b = rng.random_range(2..=4);
    let c = rng.random_range(1..=3);
    let x = if rng.random_bool(0.3) {
        uniform_tensor(rng, &[b, c], -2.0, 2.0)
    } else {
        let t = rng.random_range(1..=4);
        uniform_tensor(rng, &[b, c, t], -2.0, 2.0)
    };
    (x, c)
}

fn gradient_ops() -> Vec<(&'static str, CaseGen)> {
    vec![
        ("conv1d same", |r| conv_case(r, Padding::Same, false)),
        ("conv1d valid", |r| conv_case(r, Padding::Valid, false)),
        ("conv_transpose1d same", |r| conv_case(r, Padding::Same, true)),
        ("conv_transpose1d valid", |r| conv_case(r, Padding::Valid, true)),
        ("batchnorm_train", |r| {
            let (x, c) = bn_input(r);
            let gamma = uniform_tensor(r, &[c], 0.5, 1.5);
            let beta = uniform_tensor(r, &[c], -1.0, 1.0);
            (vec![x, gamma, beta], Box::new(|g, v| Ok(g.batchnorm_train(v[0], v[1], v[2])?.0)))
        }),
        ("batchnorm_eval", |r| {
            let (x, c) = bn_input(r);
            let gamma = uniform_tensor(r, &[c], 0.5, 1.5);
            let beta = uniform_tensor(r, &[c], -1.0, 1.0);
            let mean: Vec<f64> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
            let var: Vec<f64> = (0..c).map(|_| r.random_range(0.2..2.0)).collect();
            (
                vec![x, gamma, beta],
                Box::new(move |g, v| g.batchnorm_eval(v[0], v[1], v[2], &mean, &var)),
            )
        }),
        ("relu", |r| (vec![off_zero_tensor(r, &[3, 4])], Box::new(|g, v| Ok(g.relu(v[0]))))),
        ("timestep_dropout", |r| {
            let x = uniform_tensor(r, &[2, 3, 6], -1.0, 1.0);
            let mask_seed: u64 = r.random();
            (
                vec![x],
                Box::new(move |g, v| g.timestep_dropout(v[0], 0.4, &mut ChaCha8Rng::seed_from_u64(mask_seed))),
            )
        }),
        ("reshape", |r| (vec![uniform_tensor(r, &[2, 6], -1.0, 1.0)], Box::new(|g, v| g.reshape(v[0], &[3, 4])))),
        ("linear", |r| {
            let (m, n) = (r.random_range(1..=5), r.random_range(1..=5));
            let x = if r.random_bool(0.3) {
                uniform_tensor(r, &[n], -1.0, 1.0)
            } else {
                let b = r.random_range(1..=4);
                uniform_tensor(r, &[b, n], -1.0, 1.0)
            };
            let w = uniform_tensor(r, &[m, n], -1.0, 1.0);
            let b = uniform_tensor(r, &[m], -1.0, 1.0);
            (vec![x, w, b], Box::new(|g, v| g.linear(v[0], v[1], v[2])))
        }),
        ("l2_normalize", |r| {
            let x = if r.random_bool(0.3) { off_zero_tensor(r, &[5]) } else { off_zero_tensor(r, &[3, 5]) };
            (vec![x], Box::new(|g, v| g.l2_normalize(v[0])))
        }),
        ("row_sq_dist", |r| {
            let shape: &[usize] = if r.random_bool(0.3) { &[5] } else { &[3, 5] };
            let a = uniform_tensor(r, shape, -1.0, 1.0);
            let b = uniform_tensor(r, shape, -1.0, 1.0);
            (vec![a, b], Box::new(|g, v| g.row_sq_dist(v[0], v[1])))
        }),
        ("add", |r| {
            let (a, b) = (uniform_tensor(r, &[2, 3], -1.0, 1.0), uniform_tensor(r, &[2, 3], -1.0, 1.0));
            (vec![a, b], Box::new(|g, v| g.add(v[0], v[1])))
        }),
        ("sub", |r| {
            let (a, b) = (uniform_tensor(r, &[2, 3], -1.0, 1.0), uniform_tensor(r, &[2, 3], -1.0, 1.0));
            (vec![a, b], Box::new(|g, v| g.sub(v[0], v[1])))
        }),
        ("mul", |r| {
            let (a, b) = (uniform_tensor(r, &[2, 3], -1.0, 1.0), uniform_tensor(r, &[2, 3], -1.0, 1.0));
            (vec![a, b], Box::new(|g, v| g.mul(v[0], v[1])))
        }),
        ("scale", |r| {
            let c = r.random_range(-3.0..3.0);
            (vec![uniform_tensor(r, &[2, 3], -1.0, 1.0)], Box::new(move |g, v| Ok(g.scale(v[0], c))))
        }),
        ("sum", |r| (vec![uniform_tensor(r, &[2, 3], -1.0, 1.0)], Box::new(|g, v| Ok(g.sum(v[0]))))),
        ("mean", |r| (vec![uniform_tensor(r, &[2, 3], -1.0, 1.0)], Box::new(|g, v| Ok(g.mean(v[0]))))),
        ("sqrt", |r| (vec![uniform_tensor(r, &[2, 3], 0.3, 3.0)], Box::new(|g, v| g.sqrt(v[0])))),
        ("mse_loss", |r| {
            let (a, b) = (uniform_tensor(r, &[6], -2.0, 2.0), uniform_tensor(r, &[6], -2.0, 2.0));
            (vec![a, b], Box::new(|g, v| g.mse_loss(v[0], v[1])))
        }),
        ("rmse_loss", |r| {
            let (a, b) = (uniform_tensor(r, &[6], -2.0, 2.0), uniform_tensor(r, &[6], -2.0, 2.0));
            (vec![a, b], Box::new(|g, v| g.rmse_loss(v[0], v[1])))
        }),
        ("slice_rows", |r| {
            let start = r.random_range(0..3);
            let len = r.random_range(1..=5 - start);
            (vec![uniform_tensor(r, &[5, 3], -1.0, 1.0)], Box::new(move |g, v| g.slice_rows(v[0], start, len)))
        }),
    ]
}

fn c1_gradients() -> Outcome {
    const CASES: usize = 100;
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = (0.0, "");
    let ops = gradient_ops();
    for (name, case) in &ops {
        for _ in 0..CASES {
            let (inputs, build) = case(&mut rng);
            let err = ok(gradcheck(&inputs, build.as_ref(), rng.random()))?;
            ensure(err < 1e-4, || format!("{name}: relative error {err:.3e}"))?;
            if err > worst.0 {
                worst = (err, name);
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} operators x {CASES} cases, max relative error {:.2e} ({}), {secs:.1}s",
        ops.len(),
        worst.0,
        worst.1
    ))
}

// ---------------------------------------------------------------- C2

fn oracle_rmse(pred: &[f64], truth: &[f64]) -> f64 {
    let mut sq = 0.0;
    for k in 0..pred.len() {
        let d = pred[k] - truth[k];
        sq += d * d;
    }
    (sq / pred.len() as f64).sqrt()
}

fn oracle_score(pred: &[f64], truth: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..pred.len() {
        let d = pred[k] - truth[k];
        let a = if d < 0.0 { 13.0 } else { 10.0 };
        s += (d.abs() / a).exp_m1();
    }
    s
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(f64::MIN_POSITIVE)
}

fn c2_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..1000 {
        let n = rng.random_range(1..=300);
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=150.0)).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t + rng.random_range(-80.0..80.0)).collect();
        let (r, s) = (ok(rmse_metric(&pred, &truth))?, ok(rul_score(&pred, &truth))?);
        let (ro, so) = (oracle_rmse(&pred, &truth), oracle_score(&pred, &truth));
        ensure(rel_close(r, ro, 1e-9), || format!("vector {case}: rmse {r} vs {ro}"))?;
        ensure(rel_close(s, so, 1e-9), || format!("vector {case}: score {s} vs {so}"))?;
    }
    let e1 = std::f64::consts::E - 1.0;
    for (delta, via_score) in [(10.0, ok(rul_score(&[110.0], &[100.0]))?), (-13.0, ok(rul_score(&[87.0], &[100.0]))?)] {
        let p = rul_penalty(delta);
        ensure((p - e1).abs() < 1e-6, || format!("penalty({delta}) = {p}"))?;
        ensure((via_score - e1).abs() < 1e-6, || format!("score at delta {delta} = {via_score}"))?;
    }
    Ok("1000 random vectors within 1e-9; penalty(+10) = penalty(-13) = e - 1".into())
}

// ---------------------------------------------------------------- C3

/// A 14-channel series whose reading at step `t`, channel `c` is `1000 t + c`.
fn tagged_series(id: u32, len: usize) -> EngineSeries {
    let readings = (0..len).flat_map(|t| (0..14).map(move |c| (1000 * t + c) as f64)).collect();
    EngineSeries::new(id, 14, readings, vec![0.0; 3 * len]).unwrap()
}

/// Every admissible `(i, j)` of one series, window ends being 1-based step counts.
fn admissible(len: usize, w: usize, min_distance: usize, rul_max: f64) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for i in w..=len {
        for j in i + 1..=len {
            let gap = j - i;
            if gap >= min_distance && gap as f64 <= rul_max {
                out.insert((i, j));
            }
        }
    }
    out
}

fn check_window(x: &Tensor, b: usize, series: &EngineSeries, end: usize, w: usize) -> Result<(), String> {
    let data = &x.data()[b * 14 * w..(b + 1) * 14 * w];
    for c in 0..14 {
        for k in 0..w {
            let want = series.row(end - w + k)[c];
            ensure(data[c * w + k] == want, || format!("window ending at {end} has wrong content"))?;
        }
    }
    Ok(())
}

fn c3_pairs() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut configs = 0;
    let mut sampled = 0usize;
    let mut errors = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=5);
        let series: Vec<EngineSeries> = (0..n).map(|k| tagged_series(k as u32 + 1, rng.random_range(1..=60))).collect();
        let w = [15, 20, 30][rng.random_range(0..3)];
        let min_distance = [1, 5, 10, 15, 30][rng.random_range(0..5)];
        let rul_max = [125.0, 20.0, 7.5][rng.random_range(0..3)];
        let sets: Vec<_> = series.iter().map(|s| admissible(s.len(), w, min_distance, rul_max)).collect();
        let expected_engines: Vec<u32> =
            series.iter().zip(&sets).filter(|(_, p)| !p.is_empty()).map(|(s, _)| s.engine_id).collect();
        let sampler = match PairSampler::new(&series, w, min_distance, rul_max) {
            Ok(s) => s,
            Err(_) => {
                ensure(expected_engines.is_empty(), || "sampler refused series that admit pairs".into())?;
                errors += 1;
                continue;
            }
        };
        ensure(!expected_engines.is_empty(), || "sampler accepted series without pairs".into())?;
        ensure(sampler.eligible_engines() == expected_engines, || {
            format!("eligible {:?} vs {expected_engines:?}", sampler.eligible_engines())
        })?;
        configs += 1;

        let total: usize = sets.iter().map(BTreeSet::len).sum();
        let mut seen: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); n];
        let mut draws = 0;
        while seen.iter().map(BTreeSet::len).sum::<usize>() < total && draws < 400 * total + 1000 {
            let (k, i, j) = sampler.sample_pair(&mut rng);
            ensure(sets[k].contains(&(i, j)), || format!("inadmissible pair ({i}, {j}) on series {k}"))?;
            seen[k].insert((i, j));
            draws += 1;
        }
        ensure(seen == sets, || format!("{} of {total} admissible pairs never sampled", total - seen.iter().map(BTreeSet::len).sum::<usize>()))?;
        sampled += draws;

        let batch = ok(sampler.sample_batch(64, rul_max, &mut rng))?;
        for (b, m) in batch.meta.iter().enumerate() {
            let k = series.iter().position(|s| s.engine_id == m.engine_id).unwrap();
            ensure(sets[k].contains(&(m.i, m.j)), || format!("inadmissible batch pair ({}, {})", m.i, m.j))?;
            let want = (m.j - m.i) as f64 / rul_max;
            ensure(batch.targets[b] == want, || format!("target {} vs {want}", batch.targets[b]))?;
            check_window(&batch.anchors, b, &series[k], m.i, w)?;
            check_window(&batch.partners, b, &series[k], m.j, w)?;
        }
    }
    ensure(relative_rul_target(5, 5, 125.0).is_err(), || "i == j accepted".into())?;
    ensure(relative_rul_target(6, 5, 125.0).is_err(), || "i > j accepted".into())?;
    ensure(relative_rul_target(0, 126, 125.0).is_err(), || "gap above rul_max accepted".into())?;
    ensure(relative_rul_target(0, 125, 125.0).ok() == Some(1.0), || "gap of rul_max rejected".into())?;
    Ok(format!(
        "{configs} sampler configurations matched brute force ({sampled} draws), {errors} pair-free configurations rejected"
    ))
}

// ---------------------------------------------------------------- C4

fn c4_shapes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for subset in [Subset::FD001, Subset::FD002, Subset::FD003, Subset::FD004] {
        let w = subset.window();
        let cfg = ok(ModelConfig::new(w, 32, 0.0))?;
        let mut state = ok(ModelState::new(cfg.clone(), 1))?;
        init_decoder(&mut state.store, &cfg, 2);
        let mut fw = Forward::eval(&state.store);
        let x = fw.graph.constant(uniform_tensor(&mut rng, &[3, 14, w], -1.0, 1.0));
        let out = ok(feature_extractor(&mut fw, &cfg, x))?;
        let pre = fw.graph.shape(out.pre_flatten).to_vec();
        ensure(pre == [3, 32, w - 6], || format!("w={w}: pre-flatten shape {pre:?}"))?;
        let emb = fw.graph.shape(out.embedding).to_vec();
        ensure(emb == [3, 64], || format!("w={w}: embedding shape {emb:?}"))?;
        let rec = ok(decoder(&mut fw, &cfg, out.embedding))?;
        let rec = fw.graph.shape(rec).to_vec();
        ensure(rec == [3, 14, w], || format!("w={w}: decoder output {rec:?}"))?;
    }
    Ok("w in {30, 20, 30, 15}: pre-flatten length w - 6, embedding 64, decoder output [B, 14, w]".into())
}

// ---------------------------------------------------------------- C5

fn c5_siamese() -> Outcome {
    const N: usize = 10_000;
    const D: usize = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..N)
            .flat_map(|_| {
                let scale = 10f64.powf(rng.random_range(-3.0..3.0));
                (0..D).map(|_| scale * rng.random_range(-1.0..1.0)).collect::<Vec<_>>()
            })
            .collect()
    };
    let a = rows(&mut rng);
    let b = rows(&mut rng);
    let lambdas: Vec<f64> = (0..N).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    let scaled: Vec<f64> = a.iter().enumerate().map(|(k, v)| v * lambdas[k / D]).collect();

    let mut g = Graph::new();
    let t = |d: Vec<f64>| Tensor::new(vec![N, D], d).unwrap();
    let (va, vb, vn, vs) = (g.constant(t(a)), g.constant(t(b)), g.constant(t(neg)), g.constant(t(scaled)));
    let same = ok(siamese_distance(&mut g, va, va))?;
    let opposite = ok(siamese_distance(&mut g, va, vn))?;
    let ab = ok(siamese_distance(&mut g, va, vb))?;
    let ba = ok(siamese_distance(&mut g, vb, va))?;
    let positive = ok(siamese_distance(&mut g, va, vs))?;
    let mut worst = 0.0f64;
    for k in 0..N {
        let checks = [
            ("h(a, a)", g.value(same).data()[k], 0.0),
            ("h(a, -a)", g.value(opposite).data()[k], 4.0),
            ("h(a, b) - h(b, a)", g.value(ab).data()[k] - g.value(ba).data()[k], 0.0),
            ("h(a, la)", g.value(positive).data()[k], 0.0),
        ];
        for (name, got, want) in checks {
            let err = (got - want).abs();
            ensure(err <= 1e-9, || format!("row {k}: {name} = {got}"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("{N} random pairs, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- C6

fn random_train_set(rng: &mut ChaCha8Rng, subset: Subset) -> SeriesSet {
    let n = rng.random_range(5..=60);
    let mut ids: Vec<u32> = (1..=n as u32).collect();
    ids.shuffle(rng);
    let series = ids
        .into_iter()
        .map(|id| {
            let len = rng.random_range(1..=300);
            let readings = (0..len * 14).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ops = (0..len * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            EngineSeries::new(id, 14, readings, ops).unwrap()
        })
        .collect();
    SeriesSet::new(subset, Role::Train, series).unwrap()
}

fn c6_scenarios() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let subsets = [Subset::FD001, Subset::FD002, Subset::FD003, Subset::FD004];
    for case in 0..50 {
        let subset = subsets[rng.random_range(0..4)];
        let train = random_train_set(&mut rng, subset);
        let percent = PERCENT_GRID[rng.random_range(0..PERCENT_GRID.len())];
        let grade = GRADE_GRID[rng.random_range(0..GRADE_GRID.len())];
        let base_seed: u64 = rng.random();
        let replication = rng.random_range(0..10);
        let settings = RunSettings { base_seed, ..RunSettings::default() };
        let fail = |what: &str| format!("case {case}: {what}");

        let mut splits = Vec::new();
        for method in Pretraining::ALL {
            let spec = CellSpec {
                subset,
                method,
                percent,
                grade: (method != Pretraining::None).then_some(grade),
                replication,
            };
            let scenario = ok(cell_scenario(&spec, &settings))?;
            let first = ok(apply_scenario(&train, &scenario))?;
            let again = ok(apply_scenario(&train, &scenario))?;
            ensure(first == again, || fail("apply_scenario is not reproducible"))?;
            splits.push((method, first));
        }
        let (_, reference) = splits.iter().find(|(m, _)| *m != Pretraining::None).unwrap();
        for (method, split) in &splits {
            ensure(split.labeled == reference.labeled, || fail(&format!("labeled engines differ for {method}")))?;
            if *method != Pretraining::None {
                ensure(split == reference, || fail(&format!("split differs for {method}")))?;
            }
        }

        let split = reference;
        let n = train.len();
        let want_labeled = if percent == 100 { n } else { (percent as usize * n / 100).clamp(1, n) };
        ensure(split.labeled.len() == want_labeled, || fail("labeled count"))?;
        let labeled: BTreeSet<u32> = split.labeled.engine_ids().into_iter().collect();
        let unlabeled: BTreeSet<u32> = split.unlabeled.engine_ids().into_iter().collect();
        ensure(labeled.is_disjoint(&unlabeled), || fail("labeled and unlabeled overlap"))?;
        for s in &train.series {
            let in_l = labeled.contains(&s.engine_id);
            let in_u = unlabeled.contains(&s.engine_id);
            ensure(in_l || in_u || s.len() < 2, || fail("an engine was lost"))?;
        }
        for s in &split.labeled.series {
            let orig = train.series.iter().find(|o| o.engine_id == s.engine_id).unwrap();
            ensure(s == orig, || fail("labeled series was altered"))?;
        }
        for (k, s) in split.unlabeled.series.iter().enumerate() {
            let orig = train.series.iter().find(|o| o.engine_id == s.engine_id).unwrap();
            ensure(split.source_lengths[k] == orig.len(), || fail("source length"))?;
            ensure(s.len() < orig.len() && !s.is_empty(), || fail("truncation is not a strict prefix"))?;
            ensure(s.len() == (grade as usize * orig.len() / 100).clamp(1, orig.len() - 1), || fail("kept length"))?;
            ensure(s.readings[..] == orig.readings[..s.readings.len()], || fail("readings are not a prefix"))?;
            ensure(s.op_settings[..] == orig.op_settings[..s.op_settings.len()], || fail("settings are not a prefix"))?;
        }
    }
    Ok("50 random scenarios reproducible, method-independent, disjoint, strict-prefix".into())
}

// ---------------------------------------------------------------- C7

fn c7_directional() -> Outcome {
    const REPS: usize = 5;
    let t0 = Instant::now();
    let subset = Subset::FD004;
    let corpus = ok(synthetic::generate(subset, &synthetic::SyntheticConfig::default()))?;
    ensure(corpus.train.len() >= 60, || "corpus too small".into())?;
    let ds = ok(prepare(&corpus.train, &corpus.test, DatasetConfig::for_subset(subset)))?;
    let budget = |epochs| EpochBudget {
        min_epochs: epochs,
        max_epochs: epochs,
        patience: DEFAULT_PATIENCE,
    };
    let settings = RunSettings {
        filters: 32,
        pretrain_epochs: Some(budget(30)),
        finetune_epochs: Some(budget(50)),
        ..RunSettings::default()
    };
    let mut diffs = Vec::new();
    for replication in 0..REPS {
        let cell = |method, grade| -> Result<f64, String> {
            let spec = CellSpec {
                subset,
                method,
                percent: 2,
                grade,
                replication,
            };
            let run = ok(train_cell(&spec, &ds, &settings))?;
            Ok(ok(MetricReport::new(&run.predictions, &run.truths))?.rmse)
        };
        let s = cell(Pretraining::SelfSupervised, Some(90))?;
        let b = cell(Pretraining::None, None)?;
        eprintln!("  C7 replication {replication}: self-supervised {s:.2}, baseline {b:.2}");
        diffs.push(b - s);
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let wins = diffs.iter().filter(|d| **d > 0.0).count();
    let secs = t0.elapsed().as_secs_f64();
    let summary = format!("mean RMSE improvement {mean:.2} cycles, {wins}/{REPS} replications improved, {secs:.0}s");
    ensure(mean > 0.0 && wins >= 4 && secs < 1800.0, || summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- C8

fn smoke_dataset() -> Result<PreparedDataset, String> {
    let cfg = synthetic::SyntheticConfig {
        train_engines: 12,
        test_engines: 3,
        min_len: 60,
        max_len: 90,
        seed: 8,
        ..synthetic::SyntheticConfig::default()
    };
    let corpus = ok(synthetic::generate(Subset::FD004, &cfg))?;
    ok(prepare(&corpus.train, &corpus.test, DatasetConfig::for_subset(Subset::FD004)))
}

fn check_history(name: &str, o: &TrainOutcome, epochs: usize) -> Result<(), String> {
    ensure(o.history.len() == epochs, || format!("{name}: {} epochs recorded", o.history.len()))?;
    let min = o.history.iter().map(|r| r.validation).fold(f64::INFINITY, f64::min);
    ensure(o.best_value == min, || format!("{name}: returned {} but history minimum is {min}", o.best_value))?;
    let first = o.history.iter().find(|r| r.validation == min).unwrap().epoch;
    ensure(o.best_epoch == first, || format!("{name}: best epoch {} vs {first}", o.best_epoch))?;
    Ok(())
}

fn c8_early_stopping() -> Outcome {
    const EPOCHS: usize = 10;
    let ds = smoke_dataset()?;
    let (w, rul_max) = (ds.window(), ds.rul_max());
    let arch = ok(ModelConfig::new(w, 8, 0.0))?;
    let split = ok(apply_scenario(&ds.train, &ok(DataScenario::custom(20, 90, 1))?))?;
    let budget = |mut cfg: TrainConfig| {
        (cfg.min_epochs, cfg.max_epochs) = (EPOCHS, EPOCHS);
        cfg
    };

    let ss_cfg = budget(TrainConfig::self_supervised(Subset::FD004));
    let ss = ok(pretrain_self_supervised(&split, &ds.validation, &arch, &ss_cfg, rul_max))?;
    check_history("self-supervised", &ss, EPOCHS)?;
    let pairs = ok(frozen_validation_pairs(&ds.validation, w, &ss_cfg, rul_max))?;
    let again = ok(pair_mse(&ss.state, &pairs, Execution::default()))?;
    ensure(again == ss.best_value, || format!("self-supervised checkpoint scores {again}, recorded {}", ss.best_value))?;

    let ae = ok(pretrain_autoencoder(&split, &ds.validation, &arch, &budget(TrainConfig::autoencoder(Subset::FD004))))?;
    check_history("autoencoder", &ae, EPOCHS)?;
    let rbm = ok(pretrain_rbm(&split, &ds.validation, &arch, &budget(TrainConfig::rbm())))?;
    check_history("rbm", &rbm, EPOCHS)?;

    let val = LabeledFrames::new(&ds.validation.series, w, rul_max);
    let val_frames = batch_input(val.series, &val.refs, w);
    let ft_cfg = budget(TrainConfig::supervised(Subset::FD004));
    for (name, init) in [("fine-tune", Some(&ss.state)), ("baseline", None)] {
        let ft = ok(finetune_supervised(init, &split.labeled, &ds.validation, &arch, &ft_cfg, rul_max))?;
        check_history(name, &ft, EPOCHS)?;
        let again = ok(validation_rmse(&ft.state, &val_frames, &val.labels, Execution::default()))?;
        ensure(again == ft.best_value, || format!("{name} checkpoint scores {again}, recorded {}", ft.best_value))?;
    }
    Ok(format!("{EPOCHS}-epoch runs of all trainers return the exact history minimum"))
}

// ---------------------------------------------------------------- C9

fn check_quantized(dist: &Dist, lo: f64, hi: f64, q: f64, samples: &[f64]) -> Result<(), String> {
    for &v in samples {
        ensure(lo <= v && v <= hi, || format!("{v} outside [{lo}, {hi}]"))?;
        let k = (v / q).round();
        ensure(v == k * q, || format!("{v} is not a multiple of {q}"))?;
        ensure(dist.contains(v), || format!("{v} rejected by its own distribution"))?;
    }
    Ok(())
}

fn c9_quantization() -> Outcome {
    const N: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let lr = Dist::qlogu(1e-4, 1e-1, 5e-5);
    let lr_samples: Vec<f64> = (0..N).map(|_| lr.sample(&mut rng)).collect();
    check_quantized(&lr, 1e-4, 1e-1, 5e-5, &lr_samples)?;
    let dropout = Dist::qu(0.0, 0.5, 0.1);
    let dropout_samples: Vec<f64> = (0..N).map(|_| dropout.sample(&mut rng)).collect();
    check_quantized(&dropout, 0.0, 0.5, 0.1, &dropout_samples)?;
    let levels: BTreeSet<u64> = dropout_samples.iter().map(|v| (v / 0.1).round() as u64).collect();
    ensure(levels.len() == 6, || format!("dropout levels {levels:?}"))?;

    // Rounding to the grid moves decade boundaries to 9.75e-4 and 9.975e-3.
    let span = 1000f64.ln();
    let p0 = 9.75f64.ln() / span;
    let p1 = 99.75f64.ln() / span - p0;
    let expected = [p0, p1, 1.0 - p0 - p1];
    let mut counts = [0usize; 3];
    for &v in &lr_samples {
        counts[if v < 1e-3 { 0 } else if v < 1e-2 { 1 } else { 2 }] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(expected)
        .map(|(&o, p)| {
            let e = p * N as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let p_value = 1.0 - ChiSquared::new(2.0).unwrap().cdf(chi2);
    ensure(p_value > 0.01, || format!("decade counts {counts:?}, chi-square {chi2:.2}, p = {p_value:.4}"))?;
    Ok(format!("{N} samples each on the grid; decade counts {counts:?}, chi-square p = {p_value:.3}"))
}

// ---------------------------------------------------------------- C10

fn siamrul(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_siamrul"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("`siamrul {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn c10_end_to_end() -> Outcome {
    let t0 = Instant::now();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();
    let (dataset, ckpt, results, summary, engines) =
        (p("fd004.json"), p("self.ckpt.json"), p("results.jsonl"), p("summary.csv"), p("engines.csv"));
    let fixture_dir = fixture.to_string_lossy().into_owned();
    siamrul(&["prepare", "--subset", "FD004", "--data-dir", &fixture_dir, "--out", &dataset])?;
    let budget = ["--epochs", "3", "--patience", "2"];
    let mut pretrain = vec!["pretrain", "--method", "self", "--dataset", &dataset, "--out", &ckpt];
    pretrain.extend(budget);
    siamrul(&pretrain)?;
    let mut finetune = vec!["finetune", "--init", &ckpt, "--dataset", &dataset, "--results", &results];
    finetune.extend(budget);
    siamrul(&finetune)?;
    siamrul(&["report", "--results", &results, "--out", &summary, "--engines", &engines])?;

    let rul = std::fs::read_to_string(fixture.join("RUL_FD004.txt")).map_err(|e| e.to_string())?;
    let truths: Vec<f64> = rul.split_whitespace().map(|v| v.parse::<f64>().unwrap().min(125.0)).collect();
    let csv = std::fs::read_to_string(&engines).map_err(|e| e.to_string())?;
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or_default();
    ensure(
        header == "subset,method,percent,grade,replication,engine,true_rul,predicted_rul,delta,score",
        || format!("unexpected header `{header}`"),
    )?;
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    ensure(rows.len() == truths.len(), || format!("{} rows for {} test engines", rows.len(), truths.len()))?;
    let mut ids = BTreeSet::new();
    for row in &rows {
        ensure(row.len() == 10, || format!("row with {} fields", row.len()))?;
        ensure(row[0] == "FD004" && row[1] == "self", || format!("row identity {row:?}"))?;
        let num = |k: usize| row[k].parse::<f64>().map_err(|e| format!("field {k} `{}`: {e}", row[k]));
        let engine: usize = row[5].parse().map_err(|e| format!("engine id: {e}"))?;
        ensure((1..=truths.len()).contains(&engine) && ids.insert(engine), || format!("engine id {engine}"))?;
        let (t, pred, delta, score) = (num(6)?, num(7)?, num(8)?, num(9)?);
        ensure(t == truths[engine - 1], || format!("engine {engine}: true RUL {t}"))?;
        ensure(pred.is_finite() && delta == pred - t, || format!("engine {engine}: delta {delta}"))?;
        ensure(score == rul_penalty(delta), || format!("engine {engine}: score {score}"))?;
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!("prepare, pretrain, finetune, report: {} scored engine rows in {secs:.1}s", rows.len()))
}

// ---------------------------------------------------------------- runner

fn main() {
    let criteria: [Criterion; 10] = [
        ("C1", "gradient checks", c1_gradients),
        ("C2", "metric oracles", c2_metrics),
        ("C3", "pair targets", c3_pairs),
        ("C4", "shape contract", c4_shapes),
        ("C5", "siamese head", c5_siamese),
        ("C6", "scenario determinism", c6_scenarios),
        ("C7", "directional result", c7_directional),
        ("C8", "early stopping", c8_early_stopping),
        ("C9", "search quantization", c9_quantization),
        ("C10", "end-to-end smoke", c10_end_to_end),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| f == id || name.contains(f.as_str())) {
            continue;
        }
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS {id} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id} {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
