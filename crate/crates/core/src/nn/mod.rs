//! Minimal f64 layer library with explicit backward passes.
//!
//! Network weights live in a [`ParamSet`]; layers hold indices into it and are
//! otherwise stateless, so gradients are simply a second `ParamSet` of the same
//! layout.

mod adam;
mod conv;
mod params;
mod seq;

pub use adam::{Adam, AdamConfig};
pub use conv::{col2im, gemm, im2col, Conv2d, ConvTranspose2d};
pub use params::ParamSet;
pub use seq::{Layer, Seq, SeqBuilder, SeqTrace};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
