use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{shape_err, Error, Result};
use crate::image::{to_batch, Image};
use crate::nn::{Adam, AdamConfig};
use crate::rng::{seeded, Rng};
use crate::tensor::Tensor;
use crate::vq::codec::{CodecConfig, Level, VqCodec};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VqLosses {
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
}

impl VqLosses {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.codebook + self.commitment
    }
}

fn mean_sq_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Reconstruction MSE plus codebook and `beta`-weighted commitment terms.
///
/// Forward values of the codebook and commitment terms coincide; they differ
/// only in which side the gradient reaches.
pub fn vq_losses(image: &Tensor, recon: &Tensor, features: &Tensor, quantized: &Tensor, beta: f64) -> Result<VqLosses> {
    if image.shape() != recon.shape() || features.shape() != quantized.shape() {
        return shape_err("vq loss operands have inconsistent shapes");
    }
    let latent = mean_sq_diff(features, quantized);
    Ok(VqLosses { reconstruction: mean_sq_diff(image, recon), codebook: latent, commitment: beta * latent })
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Initialize codebook vectors from encoder features of the first batch.
    pub data_init: bool,
}

impl Default for VqTrainConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 16, lr: 2e-3, data_init: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VqLossRecord {
    pub step: usize,
    pub losses: VqLosses,
}

fn init_from_features(codec: &mut VqCodec, x: &Tensor, level: Level, rng: &mut Rng) -> Result<()> {
    let z = codec.encode_features(x, level)?;
    let (n, d, h, w) = z.dims4();
    let hw = h * w;
    let k = codec.config().codebook_size;
    let cells = n * hw;
    let picks: Vec<usize> = if cells >= k {
        sample(rng, cells, k).into_vec()
    } else {
        (0..k).map(|_| rng.random_range(0..cells)).collect()
    };
    let name = match level {
        Level::Single => "codebook",
        Level::Top => "codebook_top",
        Level::Bottom => "codebook_bottom",
    };
    let idx = codec.params().index_of(name).expect("codebook present");
    let cb = codec.params_mut().get_mut(idx).data_mut();
    for (j, &cell) in picks.iter().enumerate() {
        let (i, p) = (cell / hw, cell % hw);
        for c in 0..d {
            cb[j * d + c] = z.item(i)[c * hw + p];
        }
    }
    Ok(())
}

fn draw_batch(dataset: &[Image], size: usize, rng: &mut Rng) -> Result<Tensor> {
    let batch: Vec<Image> = (0..size).map(|_| dataset[rng.random_range(0..dataset.len())].clone()).collect();
    to_batch(&batch)
}

/// Trains a codec from scratch; deterministic given `seed`.
pub fn train_vqvae(dataset: &[Image], cfg: &CodecConfig, train: &VqTrainConfig, seed: u64) -> Result<(VqCodec, Vec<VqLossRecord>)> {
    if dataset.is_empty() {
        return Err(Error::Config("vq-vae training needs a nonempty dataset".into()));
    }
    if train.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = seeded(seed);
    let mut codec = VqCodec::new(cfg.clone(), &mut rng)?;
    if train.data_init {
        let x = draw_batch(dataset, train.batch_size, &mut rng)?;
        if cfg.hierarchical {
            init_from_features(&mut codec, &x, Level::Top, &mut rng)?;
            init_from_features(&mut codec, &x, Level::Bottom, &mut rng)?;
        } else {
            init_from_features(&mut codec, &x, Level::Single, &mut rng)?;
        }
    }
    let mut opt = Adam::new(AdamConfig::new(train.lr, 0.9, 0.999), codec.params());
    let mut log = Vec::with_capacity(train.steps);
    for step in 0..train.steps {
        let x = draw_batch(dataset, train.batch_size, &mut rng)?;
        let (fwd, grads) = codec.loss_and_grads(&x)?;
        if !fwd.losses.total().is_finite() {
            return Err(Error::NonFinite(format!("vq-vae loss at step {step}: {:?}", fwd.losses)));
        }
        opt.step(codec.params_mut(), &grads)
            .map_err(|e| Error::NonFinite(format!("vq-vae step {step}: {e}")))?;
        log.push(VqLossRecord { step, losses: fwd.losses });
    }
    Ok((codec, log))
}

/// Mean per-pixel squared error of `decode(encode(x))` over a set.
pub fn reconstruction_mse(codec: &VqCodec, images: &[Image]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in images.chunks(32) {
        let rec = codec.reconstruct(chunk)?;
        total += chunk.iter().zip(&rec).map(|(a, b)| a.mse(b)).sum::<f64>();
    }
    Ok(total / images.len() as f64)
}
