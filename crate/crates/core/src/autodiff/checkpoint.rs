//! Flat tensor maps for checkpoints: parameter path to shape plus row-major values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    #[serde(default = "yes")]
    pub trainable: bool,
}

fn yes() -> bool {
    true
}

pub type TensorMap = BTreeMap<String, StoredTensor>;

pub fn store_to_map(store: &ParamStore) -> TensorMap {
    store
        .iter_entries()
        .map(|(name, t, trainable)| {
            (
                name.to_string(),
                StoredTensor {
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                    trainable,
                },
            )
        })
        .collect()
}

pub fn map_to_store(map: &TensorMap) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for (name, st) in map {
        let t = Tensor::new(st.shape.clone(), st.values.clone())
            .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
        store.insert(name, t, st.trainable);
    }
    Ok(store)
}

/// Standalone parameter archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub tensors: TensorMap,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            tensors: store_to_map(store),
        }
    }

    pub fn to_store(&self) -> Result<ParamStore> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        map_to_store(&self.tensors)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
