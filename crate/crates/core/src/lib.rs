//! Semi-supervised remaining-useful-lifetime estimation.
//!
//! A 1D convolutional feature extractor is pre-trained without labels, either
//! as a siamese network regressing the normalized time gap between two windows
//! of the same run, as an autoencoder, or through an RBM on its first layer, and
//! then fine-tuned on the few run-to-failure series that carry labels.

pub mod autodiff;
pub mod bench;
pub mod data;
pub mod error;
pub mod models;
pub mod par;
pub mod scenarios;
pub mod trainers;

pub use error::{Error, Result};
