//! Minimal reverse-mode differentiation: the operators a 1D convolutional
//! regressor needs, plus Adam.

mod adam;
pub mod checkpoint;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, StoredTensor, TensorMap, CHECKPOINT_VERSION};
pub use graph::{BatchStats, Gradients, Graph, Padding, Var, BN_EPS};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
