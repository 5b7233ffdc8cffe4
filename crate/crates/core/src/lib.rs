//! Structured-sparsity training, pruning and evaluation for Siamese
//! speaker-verification embedding networks.

pub mod audio;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod network;
pub mod objective;
pub mod sparsity;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
