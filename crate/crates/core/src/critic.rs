//! Fully convolutional patch critic trained with a Wasserstein loss and
//! gradient penalty.

use rand::Rng as _;

use crate::error::{shape_err, Error, Result};
use crate::image::{to_batch, Image};
use crate::nn::{Adam, AdamConfig, ParamSet, Seq, SeqBuilder};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CriticConfig {
    pub channels: usize,
    pub hidden: usize,
    /// Stride-2 layers; the score map is the input shrunk by `2^strided_layers`.
    pub strided_layers: usize,
    pub leak: f64,
    pub lambda_gp: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self { channels: 3, hidden: 32, strided_layers: 3, leak: 0.2, lambda_gp: 10.0, lr: 1e-4, beta1: 0.5, beta2: 0.999 }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strided_layers == 0 || self.hidden == 0 || !(self.channels == 1 || self.channels == 3) {
            return Err(Error::Config("critic needs strided_layers >= 1, hidden >= 1, 1 or 3 channels".into()));
        }
        if self.lambda_gp < 0.0 || self.lr < 0.0 {
            return Err(Error::Config("critic lambda_gp and lr must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        1 << self.strided_layers
    }
}

/// Per-patch scores of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ScoreMap {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CriticLoss {
    pub wasserstein: f64,
    pub penalty: f64,
}

impl CriticLoss {
    pub fn total(&self) -> f64 {
        self.wasserstein + self.penalty
    }
}

#[derive(Clone, Debug)]
pub struct Critic {
    cfg: CriticConfig,
    params: ParamSet,
    net: Seq,
    opt: Adam,
}

const FD_STEP: f64 = 1e-4;

impl Critic {
    pub fn new(cfg: CriticConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let mut b = SeqBuilder::new(&mut ps, rng, "critic");
        let mut c = cfg.channels;
        for i in 0..cfg.strided_layers {
            let out = cfg.hidden * (1 << i.min(2));
            b = b.conv(c, out, 4, 2, 1).leaky_relu(cfg.leak);
            c = out;
        }
        let net = b.conv(c, 1, 3, 1, 1).build();
        let opt = Adam::new(AdamConfig::new(cfg.lr, cfg.beta1, cfg.beta2), &ps);
        Ok(Self { cfg, params: ps, net, opt })
    }

    pub fn from_params(cfg: CriticConfig, params: ParamSet) -> Result<Self> {
        let mut c = Self::new(cfg, &mut crate::rng::seeded(0))?;
        if params.len() != c.params.len() || c.params.iter().zip(params.iter()).any(|(a, b)| a.0 != b.0 || a.1.shape() != b.1.shape()) {
            return Err(Error::Checkpoint("critic parameters do not match configuration".into()));
        }
        c.params = params;
        Ok(c)
    }

    pub fn config(&self) -> &CriticConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Resets the optimizer with new hyperparameters.
    pub fn configure_training(&mut self, lambda_gp: f64, lr: f64, beta1: f64, beta2: f64) {
        self.cfg.lambda_gp = lambda_gp;
        self.cfg.lr = lr;
        self.cfg.beta1 = beta1;
        self.cfg.beta2 = beta2;
        self.opt = Adam::new(AdamConfig::new(lr, beta1, beta2), &self.params);
    }

    /// Updates completed so far.
    pub fn steps(&self) -> u64 {
        self.opt.steps()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 4 || x.shape()[1] != self.cfg.channels {
            return shape_err(format!("critic expects N x {} x H x W input, got {:?}", self.cfg.channels, x.shape()));
        }
        let s = self.cfg.stride();
        let (_, _, h, w) = x.dims4();
        if h == 0 || w == 0 || h % s != 0 || w % s != 0 {
            return shape_err(format!("critic input {h}x{w} is not a multiple of stride {s}"));
        }
        Ok(())
    }

    /// Score maps of a batch, `N x 1 x H/s x W/s`.
    pub fn score_maps(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        self.net.eval(&self.params, x)
    }

    pub fn score_map(&self, image: &Image) -> Result<ScoreMap> {
        let t = self.score_maps(&to_batch(std::slice::from_ref(image))?)?;
        let (_, _, rows, cols) = t.dims4();
        Ok(ScoreMap { rows, cols, values: t.into_data() })
    }

    pub fn mean_score(&self, image: &Image) -> Result<f64> {
        Ok(self.score_map(image)?.mean())
    }

    /// Mean score `D(x_i)` of every image in a batch.
    pub fn mean_scores(&self, x: &Tensor) -> Result<Vec<f64>> {
        let maps = self.score_maps(x)?;
        let n = maps.shape()[0];
        Ok((0..n).map(|i| maps.item(i).iter().sum::<f64>() / maps.item(i).len() as f64).collect())
    }

    /// Accumulates `grad_theta sum_i weights[i] * D(x_i)` into `grads` and
    /// returns `grad_x` of the same sum.
    fn weighted_backward(&self, x: &Tensor, weights: &[f64], grads: Option<&mut ParamSet>) -> Result<Tensor> {
        let (out, trace) = self.net.forward(&self.params, x)?;
        let (n, _, h, w) = out.dims4();
        let cells = (h * w) as f64;
        let mut dout = Tensor::zeros(out.shape());
        for i in 0..n {
            dout.item_mut(i).fill(weights[i] / cells);
        }
        Ok(self.net.backward(&self.params, &trace, &dout, grads))
    }

    /// `grad_x D(x_i)` for every image of the batch.
    pub fn input_gradients(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        self.weighted_backward(x, &vec![1.0; x.shape()[0]], None)
    }

    fn interpolates(real: &Tensor, fake: &Tensor, rng: &mut Rng) -> Tensor {
        let mut out = fake.clone();
        for i in 0..real.shape()[0] {
            let alpha: f64 = rng.random();
            for (o, &r) in out.item_mut(i).iter_mut().zip(real.item(i)) {
                *o = alpha * r + (1.0 - alpha) * *o;
            }
        }
        out
    }

    fn check_pair(&self, real: &Tensor, fake: &Tensor) -> Result<()> {
        self.check(real)?;
        if real.shape() != fake.shape() {
            return shape_err(format!("real batch {:?} vs fake batch {:?}", real.shape(), fake.shape()));
        }
        Ok(())
    }

    /// Penalty on interpolates `x_hat` given explicitly; returns the penalty
    /// value and the per-image input gradients.
    pub fn penalty_at(&self, x_hat: &Tensor) -> Result<(f64, Tensor)> {
        let g = self.input_gradients(x_hat)?;
        let n = x_hat.shape()[0];
        let mut pen = 0.0;
        for i in 0..n {
            let norm = g.item(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            pen += (norm - 1.0).powi(2);
        }
        Ok((self.cfg.lambda_gp * pen / n as f64, g))
    }

    /// Wasserstein and penalty terms; draws one mixing scalar per pair.
    pub fn loss(&self, real: &Tensor, fake: &Tensor, rng: &mut Rng) -> Result<CriticLoss> {
        self.check_pair(real, fake)?;
        let wasserstein = wasserstein_term(&self.mean_scores(real)?, &self.mean_scores(fake)?);
        let (penalty, _) = self.penalty_at(&Self::interpolates(real, fake, rng))?;
        Ok(CriticLoss { wasserstein, penalty })
    }

    /// Loss and its parameter gradient.
    ///
    /// The penalty's parameter gradient is `sum_i c_i * d/d_eps grad_theta
    /// D(x_hat_i + eps u_i)` with `u_i` the unit input gradient, evaluated by
    /// a central difference of two ordinary backward passes.
    pub fn loss_and_grads(&self, real: &Tensor, fake: &Tensor, rng: &mut Rng) -> Result<(CriticLoss, ParamSet)> {
        self.check_pair(real, fake)?;
        let n = real.shape()[0];
        let mut grads = self.params.zeros_like();
        let real_scores = self.mean_scores(real)?;
        let fake_scores = self.mean_scores(fake)?;
        self.weighted_backward(real, &vec![-1.0 / n as f64; n], Some(&mut grads))?;
        self.weighted_backward(fake, &vec![1.0 / n as f64; n], Some(&mut grads))?;
        let wasserstein = wasserstein_term(&real_scores, &fake_scores);

        let x_hat = Self::interpolates(real, fake, rng);
        let (penalty, g) = self.penalty_at(&x_hat)?;
        if self.cfg.lambda_gp > 0.0 {
            self.penalty_grad(&x_hat, &g, &mut grads)?;
        }
        Ok((CriticLoss { wasserstein, penalty }, grads))
    }

    fn penalty_grad(&self, x_hat: &Tensor, g: &Tensor, grads: &mut ParamSet) -> Result<()> {
        let n = x_hat.shape()[0];
        let mut coef = vec![0.0; n];
        let mut plus = x_hat.clone();
        let mut minus = x_hat.clone();
        for i in 0..n {
            let norm = g.item(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            coef[i] = 2.0 * self.cfg.lambda_gp * (norm - 1.0) / n as f64 / (2.0 * FD_STEP);
            for ((p, m), &gv) in plus.item_mut(i).iter_mut().zip(minus.item_mut(i).iter_mut()).zip(g.item(i)) {
                let u = gv / norm;
                *p += FD_STEP * u;
                *m -= FD_STEP * u;
            }
        }
        self.weighted_backward(&plus, &coef, Some(grads))?;
        let neg: Vec<f64> = coef.iter().map(|c| -c).collect();
        self.weighted_backward(&minus, &neg, Some(grads))?;
        Ok(())
    }

    /// One optimizer step on the critic loss.
    pub fn update(&mut self, real: &Tensor, fake: &Tensor, rng: &mut Rng) -> Result<CriticLoss> {
        let (loss, grads) = self.loss_and_grads(real, fake, rng)?;
        if !loss.total().is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite(format!("critic loss {loss:?} at update {}", self.opt.steps())));
        }
        self.opt.step(&mut self.params, &grads)?;
        Ok(loss)
    }
}

impl Critic {
    /// Loss and gradient over paired image lists that may mix heights: each
    /// height group is a separate batch, weighted by its share of pairs.
    pub fn loss_and_grads_images(&self, real: &[Image], fake: &[Image], rng: &mut Rng) -> Result<(CriticLoss, ParamSet)> {
        if real.len() != fake.len() || real.is_empty() {
            return shape_err(format!("{} real vs {} fake images", real.len(), fake.len()));
        }
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for (i, (r, f)) in real.iter().zip(fake).enumerate() {
            if r.height() != f.height() || r.width() != f.width() {
                return shape_err("paired real and fake images differ in size");
            }
            match groups.iter_mut().find(|(h, _)| *h == f.height()) {
                Some((_, v)) => v.push(i),
                None => groups.push((f.height(), vec![i])),
            }
        }
        let n = real.len() as f64;
        let mut total = CriticLoss::default();
        let mut grads = self.params.zeros_like();
        for (_, idx) in &groups {
            let r = to_batch(&idx.iter().map(|&i| real[i].clone()).collect::<Vec<_>>())?;
            let f = to_batch(&idx.iter().map(|&i| fake[i].clone()).collect::<Vec<_>>())?;
            let (loss, g) = self.loss_and_grads(&r, &f, rng)?;
            let share = idx.len() as f64 / n;
            total.wasserstein += share * loss.wasserstein;
            total.penalty += share * loss.penalty;
            grads.add_scaled(&g, share);
        }
        Ok((total, grads))
    }

    /// One optimizer step on [`loss_and_grads_images`](Self::loss_and_grads_images).
    pub fn update_images(&mut self, real: &[Image], fake: &[Image], rng: &mut Rng) -> Result<CriticLoss> {
        let (loss, grads) = self.loss_and_grads_images(real, fake, rng)?;
        if !loss.total().is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite(format!("critic loss {loss:?} at update {}", self.opt.steps())));
        }
        self.opt.step(&mut self.params, &grads)?;
        Ok(loss)
    }
}

/// `-mean D(real) + mean D(fake)`.
pub fn wasserstein_term(real: &[f64], fake: &[f64]) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    -mean(real) + mean(fake)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn tiny(layers: usize) -> CriticConfig {
        CriticConfig { channels: 1, hidden: 3, strided_layers: layers, ..CriticConfig::default() }
    }

    fn noise(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = seeded(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    #[test]
    fn score_map_geometry() {
        let c = Critic::new(CriticConfig { hidden: 2, strided_layers: 5, ..CriticConfig::default() }, &mut seeded(0)).unwrap();
        assert_eq!(c.score_maps(&Tensor::zeros(&[1, 3, 128, 128])).unwrap().shape(), &[1, 1, 4, 4]);
        assert_eq!(c.score_maps(&Tensor::zeros(&[1, 3, 64, 128])).unwrap().shape(), &[1, 1, 2, 4]);
        assert!(c.score_maps(&Tensor::zeros(&[1, 3, 48, 128])).is_err());
        for (layers, side) in [(2, 8), (3, 4), (4, 2)] {
            let c = Critic::new(CriticConfig { hidden: 2, strided_layers: layers, ..CriticConfig::default() }, &mut seeded(0)).unwrap();
            let m = c.score_map(&Image::zeros(32, 32, 3)).unwrap();
            assert_eq!((m.rows, m.cols), (side, side));
            let part = c.score_map(&Image::zeros(16, 32, 3)).unwrap();
            assert_eq!((part.rows, part.cols), (side / 2, side));
        }
    }

    #[test]
    fn mean_score_is_map_mean() {
        let c = Critic::new(CriticConfig { hidden: 4, ..CriticConfig::default() }, &mut seeded(1)).unwrap();
        let x = noise(&[1, 3, 32, 32], 2);
        let img = crate::image::from_batch(&x).remove(0);
        let m = c.score_map(&img).unwrap();
        let mean: f64 = m.values.iter().sum::<f64>() / 16.0;
        assert!((c.mean_score(&img).unwrap() - mean).abs() < 1e-15);
        assert_eq!(c.score_map(&img).unwrap(), m);
        let fixed = ScoreMap { rows: 2, cols: 2, values: vec![1.0, -1.0, 3.0, -3.0] };
        assert_eq!(fixed.mean(), 0.0);
        assert_eq!(ScoreMap { rows: 1, cols: 2, values: vec![0.7, 0.7] }.mean(), 0.7);
    }

    /// With leak 1 every layer is affine, so `D(x) = <w, x> + b` and `w` can
    /// be recovered by probing basis images.
    fn linear_weights(c: &Critic, shape: &[usize]) -> Vec<f64> {
        let base = c.mean_scores(&Tensor::zeros(shape)).unwrap()[0];
        let n: usize = shape.iter().product();
        (0..n)
            .map(|i| {
                let mut e = Tensor::zeros(shape);
                e.data_mut()[i] = 1.0;
                c.mean_scores(&e).unwrap()[0] - base
            })
            .collect()
    }

    #[test]
    fn linear_critic_penalty_is_analytic() {
        for seed in 0..3 {
            let c = Critic::new(CriticConfig { leak: 1.0, ..tiny(2) }, &mut seeded(seed)).unwrap();
            let w = linear_weights(&c, &[1, 1, 8, 8]);
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let expected = 10.0 * (norm - 1.0).powi(2);
            let real = noise(&[3, 1, 8, 8], seed + 10);
            let fake = noise(&[3, 1, 8, 8], seed + 20);
            let loss = c.loss(&real, &fake, &mut seeded(seed)).unwrap();
            assert!((loss.penalty - expected).abs() < 1e-6 * expected.max(1.0), "{} vs {expected}", loss.penalty);
        }
    }

    #[test]
    fn unit_norm_linear_critic_has_zero_penalty() {
        let mut c = Critic::new(CriticConfig { leak: 1.0, ..tiny(1) }, &mut seeded(4)).unwrap();
        let norm = linear_weights(&c, &[1, 1, 4, 4]).iter().map(|v| v * v).sum::<f64>().sqrt();
        // scaling the last layer scales w
        let last = c.params().len() - 2;
        c.params_mut().get_mut(last).scale(1.0 / norm);
        let x = noise(&[2, 1, 4, 4], 5);
        let (pen, _) = c.penalty_at(&x).unwrap();
        assert!(pen < 1e-20);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let c = Critic::new(CriticConfig { hidden: 4, ..tiny(2) }, &mut seeded(6)).unwrap();
        let x = noise(&[1, 1, 8, 8], 7);
        let g = c.input_gradients(&x).unwrap();
        let mut rng = seeded(8);
        for _ in 0..10 {
            let i = rng.random_range(0..64);
            let eps = 1e-5;
            let mut up = x.clone();
            up.data_mut()[i] += eps;
            let mut down = x.clone();
            down.data_mut()[i] -= eps;
            let fd = (c.mean_scores(&up).unwrap()[0] - c.mean_scores(&down).unwrap()[0]) / (2.0 * eps);
            let a = g.data()[i];
            assert!((fd - a).abs() <= 1e-3 * fd.abs().max(a.abs()) + 1e-10, "{fd} vs {a}");
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let c = Critic::new(CriticConfig { hidden: 3, ..tiny(2) }, &mut seeded(9)).unwrap();
        let real = noise(&[2, 1, 8, 8], 10);
        let fake = noise(&[2, 1, 8, 8], 11);
        let (_, grads) = c.loss_and_grads(&real, &fake, &mut seeded(12)).unwrap();
        let analytic = grads.flatten();
        let mut probe = c.clone();
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for i in (0..analytic.len()).step_by(3) {
            let orig = *probe.params_mut().scalar_mut(i);
            *probe.params_mut().scalar_mut(i) = orig + eps;
            let up = probe.loss(&real, &fake, &mut seeded(12)).unwrap().total();
            *probe.params_mut().scalar_mut(i) = orig - eps;
            let down = probe.loss(&real, &fake, &mut seeded(12)).unwrap().total();
            *probe.params_mut().scalar_mut(i) = orig;
            let fd = (up - down) / (2.0 * eps);
            let err = (fd - analytic[i]).abs() / (fd.abs().max(analytic[i].abs()) + 1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn wasserstein_antisymmetry_and_identity() {
        let c = Critic::new(tiny(2), &mut seeded(13)).unwrap();
        let a = noise(&[3, 1, 8, 8], 14);
        let b = noise(&[3, 1, 8, 8], 15);
        let ab = c.loss(&a, &b, &mut seeded(0)).unwrap().wasserstein;
        let ba = c.loss(&b, &a, &mut seeded(0)).unwrap().wasserstein;
        assert!((ab + ba).abs() < 1e-15);
        assert_eq!(c.loss(&a, &a, &mut seeded(0)).unwrap().wasserstein, 0.0);
        assert!(c.loss(&a, &noise(&[2, 1, 8, 8], 1), &mut seeded(0)).is_err());
    }

    #[test]
    fn zero_learning_rate_and_determinism() {
        let real = noise(&[2, 1, 8, 8], 16);
        let fake = noise(&[2, 1, 8, 8], 17);
        let mut c = Critic::new(CriticConfig { lr: 0.0, ..tiny(2) }, &mut seeded(18)).unwrap();
        let before = c.params().checksum();
        c.update(&real, &fake, &mut seeded(19)).unwrap();
        assert_eq!(c.params().checksum(), before);

        let run = || {
            let mut c = Critic::new(tiny(2), &mut seeded(18)).unwrap();
            for s in 0..3 {
                c.update(&real, &fake, &mut seeded(s)).unwrap();
            }
            c.params().checksum()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn warmup_separates_real_from_fake() {
        let real_spec = crate::data::SyntheticDatasetSpec {
            generator: crate::data::Generator::GaussianBlobs,
            image_size: 32,
            count: 64,
            seed: 20,
        };
        let fake_spec = crate::data::SyntheticDatasetSpec { generator: crate::data::Generator::ColoredRectangles, ..real_spec.clone() };
        let real = real_spec.generate();
        let fake = fake_spec.generate();
        let mut c = Critic::new(CriticConfig { hidden: 8, ..CriticConfig::default() }, &mut seeded(21)).unwrap();
        let mut rng = seeded(22);
        for _ in 0..200 {
            let idx: Vec<usize> = (0..8).map(|_| rng.random_range(0..64)).collect();
            let r = to_batch(&idx.iter().map(|&i| real[i].clone()).collect::<Vec<_>>()).unwrap();
            let f = to_batch(&idx.iter().map(|&i| fake[i].clone()).collect::<Vec<_>>()).unwrap();
            c.update(&r, &f, &mut rng).unwrap();
        }
        let mean = |imgs: &[Image]| imgs.iter().map(|i| c.mean_score(i).unwrap()).sum::<f64>() / imgs.len() as f64;
        let gap = mean(&real) - mean(&fake);
        assert!(gap > 0.0, "gap {gap}");
    }

    #[test]
    fn mixed_height_groups_match_separate_batches() {
        let c = Critic::new(CriticConfig { hidden: 4, strided_layers: 2, ..CriticConfig::default() }, &mut seeded(30)).unwrap();
        let spec = crate::data::SyntheticDatasetSpec {
            generator: crate::data::Generator::GaussianBlobs,
            image_size: 16,
            count: 4,
            seed: 31,
        };
        let imgs = spec.generate();
        let real = vec![imgs[0].clone(), imgs[1].crop_rows(8), imgs[2].clone()];
        let fake = vec![imgs[3].clone(), imgs[2].crop_rows(8), imgs[1].clone()];
        let (loss, grads) = c.loss_and_grads_images(&real, &fake, &mut seeded(32)).unwrap();
        let mut rng = seeded(32);
        let full = c
            .loss_and_grads(&to_batch(&[real[0].clone(), real[2].clone()]).unwrap(), &to_batch(&[fake[0].clone(), fake[2].clone()]).unwrap(), &mut rng)
            .unwrap();
        let part = c.loss_and_grads(&to_batch(&real[1..2]).unwrap(), &to_batch(&fake[1..2]).unwrap(), &mut rng).unwrap();
        let expected = (2.0 * full.0.wasserstein + part.0.wasserstein) / 3.0;
        assert!((loss.wasserstein - expected).abs() < 1e-12);
        let mut g = c.params().zeros_like();
        g.add_scaled(&full.1, 2.0 / 3.0);
        g.add_scaled(&part.1, 1.0 / 3.0);
        for (a, b) in grads.flatten().iter().zip(g.flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(c.loss_and_grads_images(&real[..2], &fake[..1], &mut rng).is_err());
    }
}
