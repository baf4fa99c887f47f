use crate::error::{Error, Result};
use crate::nn::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are laid out like the parameter set.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        let m: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self { cfg, v: m.clone(), m, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descent step `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads.get(i).data();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = params.get_mut(i).data_mut();
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let step = lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
                p[k] -= step;
            }
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("parameters after optimizer step".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn minimizes_quadratic() {
        let mut p = ParamSet::new();
        p.push("x", Tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(AdamConfig::new(0.05, 0.9, 0.999), &p);
        for _ in 0..2000 {
            let mut g = p.zeros_like();
            for k in 0..2 {
                g.get_mut(0).data_mut()[k] = 2.0 * p.get(0).data()[k];
            }
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p.get(0).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = ParamSet::new();
        p.push("x", Tensor::from_vec(&[2], vec![0.3, -0.7]).unwrap());
        let before = p.clone();
        let mut g = p.zeros_like();
        g.get_mut(0).fill(1.5);
        Adam::new(AdamConfig::new(0.0, 0.5, 0.999), &p).step(&mut p, &g).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn rejects_nan_gradient() {
        let mut p = ParamSet::new();
        p.push("x", Tensor::zeros(&[1]));
        let mut g = p.zeros_like();
        g.get_mut(0).fill(f64::NAN);
        let mut opt = Adam::new(AdamConfig::new(0.1, 0.9, 0.999), &p);
        assert!(matches!(opt.step(&mut p, &g), Err(Error::NonFinite(_))));
    }
}
