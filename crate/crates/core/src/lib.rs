//! Reinforced adversarial fine-tuning of autoregressive priors over
//! vector-quantized image latents.

pub mod checkpoint;
pub mod critic;
pub mod data;
pub mod error;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod parallel;
pub mod prior;
pub mod ral;
pub mod rng;
pub mod tensor;
pub mod vq;

pub use error::{Error, Result};
pub use tensor::Tensor;
