use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, BLOCKS};
use super::layers::{feature_extractor, regression_head, Forward};
use crate::autodiff::checkpoint::{map_to_store, store_to_map, TensorMap};
use crate::autodiff::{ParamStore, Tensor, CHECKPOINT_VERSION};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Rows per chunk when running inference over many frames.
pub const INFERENCE_CHUNK: usize = 256;

/// How a feature extractor was initialized before supervised training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pretraining {
    None,
    Autoencoder,
    Rbm,
    SelfSupervised,
}

/// Parameters of every network component plus the metadata needed to reload them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub init_seed: u64,
    pub pretraining: Pretraining,
}

fn kaiming_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}

fn insert_batchnorm(store: &mut ParamStore, prefix: &str, channels: usize) {
    store.insert(&format!("{prefix}.gamma"), Tensor::filled(&[channels], 1.0), true);
    store.insert(&format!("{prefix}.beta"), Tensor::zeros(&[channels]), true);
    store.insert(&format!("{prefix}.running_mean"), Tensor::zeros(&[channels]), false);
    store.insert(&format!("{prefix}.running_var"), Tensor::filled(&[channels], 1.0), false);
}

fn init_extractor<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) {
    for k in 1..=BLOCKS {
        let c_in = if k == 1 { cfg.in_channels } else { cfg.filters };
        let p = format!("f.block{k}");
        store.insert(&format!("{p}.conv.weight"), kaiming_uniform(rng, &[cfg.filters, c_in, 3], c_in * 3), true);
        store.insert(&format!("{p}.conv.bias"), Tensor::zeros(&[cfg.filters]), true);
        insert_batchnorm(store, &format!("{p}.bn"), cfg.filters);
    }
    let n = cfg.flat_features();
    store.insert("f.fc.weight", kaiming_uniform(rng, &[cfg.latent, n], n), true);
    store.insert("f.fc.bias", Tensor::zeros(&[cfg.latent]), true);
}

fn init_head<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) {
    insert_batchnorm(store, "g.bn", cfg.latent);
    store.insert("g.fc.weight", kaiming_uniform(rng, &[1, cfg.latent], cfg.latent), true);
    store.insert("g.fc.bias", Tensor::zeros(&[1]), true);
}

/// Adds decoder parameters (`d.*`) mirroring the extractor.
pub fn init_decoder(store: &mut ParamStore, cfg: &ModelConfig, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdec0_de00);
    let n = cfg.flat_features();
    store.insert("d.fc.weight", kaiming_uniform(&mut rng, &[n, cfg.latent], cfg.latent), true);
    store.insert("d.fc.bias", Tensor::zeros(&[n]), true);
    for k in (1..=BLOCKS).rev() {
        let c_out = if k == 1 { cfg.in_channels } else { cfg.filters };
        let p = format!("d.block{k}");
        store.insert(
            &format!("{p}.convt.weight"),
            kaiming_uniform(&mut rng, &[cfg.filters, c_out, 3], cfg.filters * 3),
            true,
        );
        store.insert(&format!("{p}.convt.bias"), Tensor::zeros(&[c_out]), true);
        if k > 1 {
            insert_batchnorm(store, &format!("{p}.bn"), c_out);
        }
    }
}

/// Adds RBM parameters (`rbm.*`) with the geometry of the first convolution.
pub fn init_rbm(store: &mut ParamStore, cfg: &ModelConfig, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b0b_0b0b);
    let normal = Normal::new(0.0, 0.01).expect("valid normal");
    let n = cfg.filters * cfg.in_channels * 3;
    let w = (0..n).map(|_| normal.sample(&mut rng)).collect();
    store.insert(
        "rbm.weight",
        Tensor::new(vec![cfg.filters, cfg.in_channels, 3], w).expect("shape"),
        true,
    );
    store.insert("rbm.hidden_bias", Tensor::zeros(&[cfg.filters]), true);
    store.insert("rbm.visible_bias", Tensor::zeros(&[cfg.in_channels]), true);
}

#[derive(Serialize, Deserialize)]
struct ModelCheckpoint {
    version: u32,
    fingerprint: String,
    config: ModelConfig,
    init_seed: u64,
    pretraining: Pretraining,
    normalize_embeddings: bool,
    tensors: TensorMap,
}

impl ModelState {
    /// Randomly initialized extractor `f` and head `g`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_extractor(&mut store, &config, &mut rng);
        init_head(&mut store, &config, &mut rng);
        Ok(Self {
            config,
            store,
            init_seed: seed,
            pretraining: Pretraining::None,
        })
    }

    /// Self-supervised extractors are trained on normalized embeddings, so their
    /// head sees the embedding divided by its norm.
    pub fn normalize_embeddings(&self) -> bool {
        self.pretraining == Pretraining::SelfSupervised
    }

    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    /// Fine-tuning start point: this state's extractor, copied bit-exactly, with a
    /// fresh random head drawn from `seed`.
    pub fn for_finetuning(&self, seed: u64, dropout: f64) -> Result<Self> {
        let mut config = self.config.clone();
        config.dropout = dropout;
        let mut fresh = ModelState::new(config, seed)?;
        fresh.store.copy_prefix_from(&self.store, "f.")?;
        fresh.pretraining = self.pretraining;
        Ok(fresh)
    }

    /// Keeps only the extractor and head.
    pub fn strip_auxiliary(&mut self) {
        self.store = self.store.without_prefix("d.").without_prefix("rbm.");
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = ModelCheckpoint {
            version: CHECKPOINT_VERSION,
            fingerprint: self.fingerprint(),
            config: self.config.clone(),
            init_seed: self.init_seed,
            pretraining: self.pretraining,
            normalize_embeddings: self.normalize_embeddings(),
            tensors: store_to_map(&self.store),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: ModelCheckpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", ck.version)));
        }
        if ck.fingerprint != ck.config.fingerprint() {
            return Err(Error::Checkpoint(format!(
                "architecture fingerprint {} does not match configuration ({})",
                ck.fingerprint,
                ck.config.fingerprint()
            )));
        }
        let store = map_to_store(&ck.tensors)?;
        let state = Self {
            config: ck.config,
            store,
            init_seed: ck.init_seed,
            pretraining: ck.pretraining,
        };
        state.check_shapes()?;
        Ok(state)
    }

    /// Verifies that the stored extractor and head match the configuration.
    pub fn check_shapes(&self) -> Result<()> {
        let reference = ModelState::new(self.config.clone(), 0)?;
        for id in reference.store.ids() {
            let name = reference.store.name(id);
            let got = self
                .store
                .get(name)
                .map_err(|_| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if got.shape() != reference.store.value(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    reference.store.value(id).shape()
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Eval-mode lifetime predictions for `[N, C, w]` frames.
    pub fn predict(&self, frames: &Tensor, exec: Execution) -> Result<Vec<f64>> {
        let normalize = self.normalize_embeddings();
        let chunks = self.eval_chunks(frames, exec, |fw, x| {
            let out = feature_extractor(fw, &self.config, x)?;
            let y = regression_head(fw, out.embedding, normalize)?;
            Ok(fw.graph.value(y).data().to_vec())
        })?;
        Ok(chunks.concat())
    }

    /// Eval-mode embeddings for `[N, C, w]` frames, one row of `latent` values per frame.
    pub fn embed(&self, frames: &Tensor, exec: Execution) -> Result<Vec<Vec<f64>>> {
        let latent = self.config.latent;
        let chunks = self.eval_chunks(frames, exec, |fw, x| {
            let out = feature_extractor(fw, &self.config, x)?;
            Ok(fw.graph.value(out.embedding).data().to_vec())
        })?;
        Ok(chunks.concat().chunks(latent).map(<[f64]>::to_vec).collect())
    }

    pub(crate) fn eval_chunks<F>(&self, frames: &Tensor, exec: Execution, f: F) -> Result<Vec<Vec<f64>>>
    where
        F: Fn(&mut Forward<'_>, crate::autodiff::Var) -> Result<Vec<f64>> + Sync + Send,
    {
        let shape = frames.shape();
        if shape.len() != 3 {
            return Err(Error::shape("predict", format!("expected [N, C, w], got {shape:?}")));
        }
        let (n, per) = (shape[0], shape[1] * shape[2]);
        let starts: Vec<usize> = (0..n).step_by(INFERENCE_CHUNK).collect();
        par::map(exec, &starts, |&s| {
            let e = (s + INFERENCE_CHUNK).min(n);
            let chunk = Tensor::new(vec![e - s, shape[1], shape[2]], frames.data()[s * per..e * per].to_vec())?;
            let mut fw = Forward::eval(&self.store);
            let x = fw.graph.constant(chunk);
            f(&mut fw, x)
        })
        .into_iter()
        .collect()
    }
}
