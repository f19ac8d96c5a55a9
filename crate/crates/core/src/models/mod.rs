//! Networks: feature extractor `f`, regression head `g`, siamese distance, decoder, RBM.

mod config;
mod layers;
pub mod rbm;
mod state;

pub use config::{block_padding, ModelConfig, BLOCKS, DEFAULT_FILTERS, IN_CHANNELS, LATENT_DIM};
pub use layers::{
    apply_bn_updates, decoder, feature_extractor, regression_head, siamese_distance, ExtractorOutput, Forward, Mode,
    BN_MOMENTUM,
};
pub use rbm::rbm_energy_step;
pub use state::{init_decoder, init_rbm, ModelState, Pretraining, INFERENCE_CHUNK};
