//! Forward-pass context and the networks built from autodiff operators.

use rand::RngCore;

use super::config::{block_padding, ModelConfig, BLOCKS};
use crate::autodiff::{BatchStats, Graph, Padding, ParamStore, Var};
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: the graph being recorded, the parameters it reads, and pending
/// running-statistics updates from train-mode batchnorm layers.
pub struct Forward<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    mode: Mode,
    rng: Option<&'a mut dyn RngCore>,
    bn_updates: Vec<(String, BatchStats)>,
}

impl<'a> Forward<'a> {
    pub fn eval(store: &'a ParamStore) -> Self {
        Self {
            graph: Graph::new(),
            store,
            mode: Mode::Eval,
            rng: None,
            bn_updates: Vec::new(),
        }
    }

    pub fn train(store: &'a ParamStore, rng: &'a mut dyn RngCore) -> Self {
        Self {
            graph: Graph::new(),
            store,
            mode: Mode::Train,
            rng: Some(rng),
            bn_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let id = self.store.id(name)?;
        Ok(self.graph.param(self.store, id))
    }

    pub fn linear(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        self.graph.linear(x, w, b)
    }

    pub fn batchnorm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        match self.mode {
            Mode::Train => {
                let (y, stats) = self.graph.batchnorm_train(x, gamma, beta)?;
                self.bn_updates.push((prefix.to_string(), stats));
                Ok(y)
            }
            Mode::Eval => {
                let rm = self.store.get(&format!("{prefix}.running_mean"))?.data();
                let rv = self.store.get(&format!("{prefix}.running_var"))?.data();
                self.graph.batchnorm_eval(x, gamma, beta, rm, rv)
            }
        }
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        match (self.mode, self.rng.as_deref_mut()) {
            (Mode::Train, Some(rng)) => self.graph.timestep_dropout(x, p, rng),
            _ => {
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::InvalidProbability(p));
                }
                Ok(x)
            }
        }
    }

    /// Running-statistics updates collected so far.
    pub fn take_bn_updates(&mut self) -> Vec<(String, BatchStats)> {
        std::mem::take(&mut self.bn_updates)
    }
}

/// Moves running means and variances toward the batch statistics.
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[(String, BatchStats)]) -> Result<()> {
    for (prefix, stats) in updates {
        let mid = store.id(&format!("{prefix}.running_mean"))?;
        for (r, b) in store.value_mut(mid).data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        let vid = store.id(&format!("{prefix}.running_var"))?;
        for (r, b) in store.value_mut(vid).data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
    Ok(())
}

/// Embedding plus the activation that was flattened to produce it.
pub struct ExtractorOutput {
    pub embedding: Var,
    pub pre_flatten: Var,
}

/// Six conv blocks (conv, batchnorm, ReLU) with time-step dropout after blocks 1 to 5,
/// then flatten and a linear map to the latent dimension.
///
/// `x` is `[B, C, w]`, or a single frame `[C, w]` which is treated as a batch of one.
pub fn feature_extractor(fw: &mut Forward<'_>, cfg: &ModelConfig, x: Var) -> Result<ExtractorOutput> {
    let shape = fw.graph.shape(x).to_vec();
    let x = match shape.as_slice() {
        [c, w] => fw.graph.reshape(x, &[1, *c, *w])?,
        [_, _, _] => x,
        _ => return Err(Error::shape("feature_extractor", format!("expected [B, C, w], got {shape:?}"))),
    };
    let s = fw.graph.shape(x).to_vec();
    if s[1] != cfg.in_channels || s[2] != cfg.window {
        return Err(Error::shape(
            "feature_extractor",
            format!("expected frames of [{}, {}], got [{}, {}]", cfg.in_channels, cfg.window, s[1], s[2]),
        ));
    }
    let batch = s[0];
    let mut h = x;
    for k in 1..=BLOCKS {
        let prefix = format!("f.block{k}");
        let w = fw.param(&format!("{prefix}.conv.weight"))?;
        let b = fw.param(&format!("{prefix}.conv.bias"))?;
        h = fw.graph.conv1d(h, w, b, block_padding(k))?;
        h = fw.batchnorm(h, &format!("{prefix}.bn"))?;
        h = fw.graph.relu(h);
        if k < BLOCKS {
            h = fw.dropout(h, cfg.dropout)?;
        }
    }
    let pre_flatten = h;
    let flat = fw.graph.reshape(h, &[batch, cfg.flat_features()])?;
    let embedding = fw.linear(flat, "f.fc")?;
    Ok(ExtractorOutput { embedding, pre_flatten })
}

/// Regression head: optional L2 normalization, batchnorm, ReLU, linear to one unit.
/// Returns a `[B]` vector of lifetimes in cycles.
pub fn regression_head(fw: &mut Forward<'_>, embedding: Var, normalize: bool) -> Result<Var> {
    let mut h = embedding;
    if normalize {
        h = fw.graph.l2_normalize(h)?;
    }
    h = fw.batchnorm(h, "g.bn")?;
    h = fw.graph.relu(h);
    let out = fw.linear(h, "g.fc")?;
    let rows = fw.graph.shape(out)[0];
    fw.graph.reshape(out, &[rows])
}

/// Squared distance between L2-normalized embeddings, in `[0, 4]`.
pub fn siamese_distance(graph: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let na = graph.l2_normalize(a)?;
    let nb = graph.l2_normalize(b)?;
    graph.row_sq_dist(na, nb)
}

/// Mirror of the extractor: linear to `m * (w - 6)`, then transposed convolutions from
/// block 6 down to block 1. Blocks 6..2 are followed by batchnorm and ReLU; the last
/// layer outputs the reconstruction directly.
pub fn decoder(fw: &mut Forward<'_>, cfg: &ModelConfig, embedding: Var) -> Result<Var> {
    let batch = fw.graph.shape(embedding)[0];
    let flat = fw.linear(embedding, "d.fc")?;
    let mut h = fw.graph.reshape(flat, &[batch, cfg.filters, cfg.flat_time()])?;
    for k in (1..=BLOCKS).rev() {
        let prefix = format!("d.block{k}");
        let w = fw.param(&format!("{prefix}.convt.weight"))?;
        let b = fw.param(&format!("{prefix}.convt.bias"))?;
        let expected = fw.graph.shape(h)[2] + if block_padding(k) == Padding::Valid { 2 } else { 0 };
        h = fw
            .graph
            .conv_transpose1d(h, w, b, block_padding(k))
            .map_err(|e| Error::shape("decoder", format!("block {k}: {e}")))?;
        if fw.graph.shape(h)[2] != expected {
            return Err(Error::shape("decoder", format!("block {k} produced length {}", fw.graph.shape(h)[2])));
        }
        if k > 1 {
            h = fw.batchnorm(h, &format!("{prefix}.bn"))?;
            h = fw.graph.relu(h);
        }
    }
    let s = fw.graph.shape(h);
    if s[1] != cfg.in_channels || s[2] != cfg.window {
        return Err(Error::shape("decoder", format!("output {s:?} does not match the frame shape")));
    }
    Ok(h)
}
