//! Causal autoregressive prior over code grids: gated masked convolutions
//! with separate vertical and horizontal stacks, optional conditioning on a
//! coarser top-level grid, MLE training, cached sampling and completion.

mod cache;
mod complete;
mod network;
mod train;

pub use cache::SamplerCache;
pub use complete::{complete, Priors};
pub use network::{ConditionConfig, Logits, PriorConfig, PriorNetwork, SampleOptions};
pub use train::{train_mle, MleRecord, MleTrainConfig, MleTrainer};

#[cfg(test)]
mod tests;
