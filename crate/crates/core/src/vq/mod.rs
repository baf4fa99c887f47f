//! Vector-quantized autoencoder: encoder, codebook and decoder, plus the
//! image/code-grid transforms every other module builds on.

mod codec;
mod grid;
mod train;

pub use codec::{CodecConfig, Codes, Level, VqCodec, VqForward};
pub use grid::{quantize, quantize_batch, CodeGrid, Codebook, HierarchicalCodes, LatentGrid};
pub use train::{reconstruction_mse, train_vqvae, vq_losses, VqLossRecord, VqLosses, VqTrainConfig};
