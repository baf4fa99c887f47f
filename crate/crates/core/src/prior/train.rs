use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::prior::PriorNetwork;
use crate::rng::{seeded, Rng};
use crate::vq::CodeGrid;

#[derive(Clone, Debug, PartialEq)]
pub struct MleTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for MleTrainConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 16, lr: 1e-3 }
    }
}

/// Mean per-grid NLL (nats) of the batch used at `step`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MleRecord {
    pub step: usize,
    pub nll: f64,
}

/// Stateful maximum-likelihood trainer; one [`step`](Self::step) is one
/// optimizer update on a random minibatch.
#[derive(Debug)]
pub struct MleTrainer<'a> {
    grids: &'a [CodeGrid],
    conditions: Option<&'a [CodeGrid]>,
    batch: usize,
    rng: Rng,
    adam: Adam,
    step: usize,
}

impl<'a> MleTrainer<'a> {
    /// For a conditional prior, `conditions[i]` is the top grid paired with
    /// `grids[i]`.
    pub fn new(model: &PriorNetwork, grids: &'a [CodeGrid], conditions: Option<&'a [CodeGrid]>, cfg: &MleTrainConfig, seed: u64) -> Result<Self> {
        if grids.is_empty() {
            return Err(Error::Config("prior training needs at least one grid".into()));
        }
        if let Some(c) = conditions {
            if c.len() != grids.len() {
                return Err(Error::InvalidArgument(format!("{} conditions for {} grids", c.len(), grids.len())));
            }
        }
        for (i, g) in grids.iter().enumerate() {
            model.check_grid(g, conditions.map(|c| &c[i]))?;
        }
        Ok(Self {
            grids,
            conditions,
            batch: cfg.batch_size.max(1),
            rng: seeded(seed),
            adam: Adam::new(AdamConfig::new(cfg.lr, 0.9, 0.999), model.params()),
            step: 0,
        })
    }

    pub fn step(&mut self, model: &mut PriorNetwork) -> Result<MleRecord> {
        let mut grads = model.params().zeros_like();
        let mut nll = 0.0;
        for _ in 0..self.batch {
            let i = self.rng.random_range(0..self.grids.len());
            let g = &self.grids[i];
            let weights = vec![-1.0 / self.batch as f64; g.len()];
            // weighted by -1/batch, so this sums to the batch-mean NLL
            nll += model.accumulate_logprob_grad(g, self.conditions.map(|c| &c[i]), &weights, &mut grads)?;
        }
        let step = self.step;
        if !nll.is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite(format!("prior training diverged at step {step}")));
        }
        self.adam.step(model.params_mut(), &grads)?;
        self.step += 1;
        Ok(MleRecord { step, nll })
    }
}

/// Maximum-likelihood training on `grids` for `cfg.steps` updates.
pub fn train_mle(
    model: &mut PriorNetwork,
    grids: &[CodeGrid],
    conditions: Option<&[CodeGrid]>,
    cfg: &MleTrainConfig,
    seed: u64,
) -> Result<Vec<MleRecord>> {
    let mut trainer = MleTrainer::new(model, grids, conditions, cfg, seed)?;
    (0..cfg.steps).map(|_| trainer.step(model)).collect()
}
