//! Fréchet distance between Gaussian fits of image features, with a fixed
//! random convolutional feature extractor.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{shape_err, Error, Result};
use crate::image::{to_batch, Image};
use crate::nn::{ParamSet, Seq, SeqBuilder};
use crate::prior::Priors;
use crate::rng::{seeded, substream};
use crate::vq::VqCodec;

/// Covariance regularization added to every fitted covariance.
pub const COV_EPS: f64 = 1e-6;

/// Randomly initialized strided conv stack with global average pooling.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    params: ParamSet,
    net: Seq,
    channels: usize,
    dim: usize,
}

impl FeatureExtractor {
    /// Three stride-2 conv layers ending in `dim` channels.
    pub fn random_conv(channels: usize, dim: usize, seed: u64) -> Self {
        let mut ps = ParamSet::new();
        let mut rng = seeded(seed);
        let h1 = (dim / 4).max(1);
        let h2 = (dim / 2).max(1);
        let net = SeqBuilder::new(&mut ps, &mut rng, "features")
            .conv(channels, h1, 4, 2, 1)
            .leaky_relu(0.2)
            .conv(h1, h2, 4, 2, 1)
            .leaky_relu(0.2)
            .conv(h2, dim, 4, 2, 1)
            .leaky_relu(0.2)
            .build();
        Self { params: ps, net, channels, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// One feature row per image.
    pub fn extract(&self, images: &[Image]) -> Result<DMatrix<f64>> {
        let first = images.first().ok_or_else(|| Error::InvalidArgument("no images to extract features from".into()))?;
        if first.channels() != self.channels {
            return shape_err(format!("extractor expects {} channels, got {}", self.channels, first.channels()));
        }
        let mut out = DMatrix::zeros(images.len(), self.dim);
        let mut row = 0;
        for chunk in images.chunks(64) {
            let maps = self.net.eval(&self.params, &to_batch(chunk)?)?;
            let (n, c, h, w) = maps.dims4();
            let hw = (h * w) as f64;
            for i in 0..n {
                let item = maps.item(i);
                for ch in 0..c {
                    out[(row, ch)] = item[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / hw;
                }
                row += 1;
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    /// Unbiased covariance plus `COV_EPS * I`.
    pub cov: DMatrix<f64>,
    pub count: usize,
}

/// Column means and regularized unbiased covariance of a feature matrix.
pub fn fit_stats(features: &DMatrix<f64>) -> Result<FeatureStats> {
    let (n, f) = features.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("feature statistics need at least 2 rows, got {n}")));
    }
    let mean = features.row_mean().transpose();
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    cov = (&cov + cov.transpose()) * 0.5;
    cov += DMatrix::identity(f, f) * COV_EPS;
    Ok(FeatureStats { mean, cov, count: n })
}

/// Symmetric square root with negative eigenvalues clipped to zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// `(S_a S_b)^(1/2)` has the same trace as `(A S_b A)^(1/2)` with
/// `A = S_a^(1/2)`, which is symmetric.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return shape_err(format!("feature dims {} vs {}", a.mean.len(), b.mean.len()));
    }
    let diff = &a.mean - &b.mean;
    let root_a = sqrt_psd(&a.cov);
    let mut inner = &root_a * &b.cov * &root_a;
    inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let d = diff.norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    Ok(d.max(0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FidConfig {
    pub samples: usize,
    pub feature_dim: usize,
    pub extractor_seed: u64,
}

impl Default for FidConfig {
    fn default() -> Self {
        Self { samples: 2000, feature_dim: 64, extractor_seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FidReport {
    pub fid_vs_real: f64,
    pub fid_vs_reconstructed_real: f64,
    /// Real vs `decode(encode(real))`: the compression floor.
    pub recon_fid: f64,
}

/// Decodes `cfg.samples` prior samples drawn on substreams of `seed`.
pub fn sample_images(codec: &VqCodec, priors: &Priors, count: usize, seed: u64) -> Result<Vec<Image>> {
    let codes = crate::parallel::map_indexed(count, |i| priors.sample(&mut substream(seed, i as u64), None, None))?;
    let mut out = Vec::with_capacity(count);
    for chunk in codes.chunks(64) {
        out.extend(codec.decode_batch(chunk)?);
    }
    Ok(out)
}

/// Fréchet distances of decoded samples against `reference` images and
/// against their reconstructions.
pub fn eval_fid(codec: &VqCodec, priors: &Priors, reference: &[Image], cfg: &FidConfig, seed: u64) -> Result<FidReport> {
    let samples = sample_images(codec, priors, cfg.samples, seed)?;
    eval_fid_images(codec, &samples, reference, cfg)
}

/// [`eval_fid`] for an already generated sample set.
pub fn eval_fid_images(codec: &VqCodec, samples: &[Image], reference: &[Image], cfg: &FidConfig) -> Result<FidReport> {
    let channels = reference.first().map_or(3, Image::channels);
    let ext = FeatureExtractor::random_conv(channels, cfg.feature_dim, cfg.extractor_seed);
    let recon = codec.reconstruct(reference)?;
    let s_real = fit_stats(&ext.extract(reference)?)?;
    let s_recon = fit_stats(&ext.extract(&recon)?)?;
    let s_gen = fit_stats(&ext.extract(samples)?)?;
    Ok(FidReport {
        fid_vs_real: frechet_distance(&s_gen, &s_real)?,
        fid_vs_reconstructed_real: frechet_distance(&s_gen, &s_recon)?,
        recon_fid: frechet_distance(&s_recon, &s_real)?,
    })
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;

    fn stats(mean: &[f64], cov: &[f64]) -> FeatureStats {
        let f = mean.len();
        FeatureStats { mean: DVector::from_row_slice(mean), cov: DMatrix::from_row_slice(f, f, cov), count: 2 }
    }

    fn random_spd(f: usize, rng: &mut crate::rng::Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(f, f, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        &a * a.transpose() + DMatrix::identity(f, f) * 0.1
    }

    /// Denman-Beavers iteration for the principal square root of `m`.
    fn denman_beavers(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let mut y = m.clone();
        let mut z = DMatrix::identity(n, n);
        for _ in 0..100 {
            let yi = y.clone().try_inverse().unwrap();
            let zi = z.clone().try_inverse().unwrap();
            let ny = (&y + zi) * 0.5;
            let nz = (&z + yi) * 0.5;
            let done = (&ny - &y).norm() < 1e-15 * ny.norm();
            y = ny;
            z = nz;
            if done {
                break;
            }
        }
        y
    }

    #[test]
    fn two_point_stats() {
        let f = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 0.0]);
        let s = fit_stats(&f).unwrap();
        assert_eq!(s.mean.as_slice(), &[1.0, 0.0]);
        assert!((s.cov[(0, 0)] - (2.0 + COV_EPS)).abs() < 1e-15);
        assert_eq!(s.cov[(1, 1)], COV_EPS);
        assert_eq!(s.cov[(0, 1)], 0.0);
        let constant = fit_stats(&DMatrix::from_element(5, 3, 0.4)).unwrap();
        assert!((constant.cov.clone() - DMatrix::identity(3, 3) * COV_EPS).norm() < 1e-18);
        assert!(fit_stats(&DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn covariance_matches_two_pass_oracle() {
        let mut rng = seeded(1);
        let f = DMatrix::from_fn(500, 8, |_, j| rng.random::<f64>() * (j + 1) as f64);
        let s = fit_stats(&f).unwrap();
        for a in 0..8 {
            let ma: f64 = (0..500).map(|i| f[(i, a)]).sum::<f64>() / 500.0;
            for b in 0..8 {
                let mb: f64 = (0..500).map(|i| f[(i, b)]).sum::<f64>() / 500.0;
                let c: f64 = (0..500).map(|i| (f[(i, a)] - ma) * (f[(i, b)] - mb)).sum::<f64>() / 499.0;
                let reg = if a == b { COV_EPS } else { 0.0 };
                assert!((s.cov[(a, b)] - c - reg).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn closed_forms() {
        let a = stats(&[0.0], &[1.0]);
        let b = stats(&[1.0], &[4.0]);
        assert_eq!(frechet_distance(&a, &b).unwrap(), 2.0);
        let mut rng = seeded(2);
        let s = FeatureStats { mean: DVector::from_fn(4, |_, _| rng.random()), cov: random_spd(4, &mut rng), count: 10 };
        assert!(frechet_distance(&s, &s).unwrap() <= 1e-8);
        // 1-D scale law
        let sa = stats(&[0.3], &[2.0]);
        let sb = stats(&[-1.1], &[0.5]);
        let k = 3.0;
        let scaled = |s: &FeatureStats| stats(&[s.mean[0] * k], &[s.cov[(0, 0)] * k * k]);
        let d = frechet_distance(&sa, &sb).unwrap();
        assert!((frechet_distance(&scaled(&sa), &scaled(&sb)).unwrap() - k * k * d).abs() < 1e-12);
        assert!(frechet_distance(&a, &s).is_err());
    }

    #[test]
    fn symmetry_translation_and_iterative_oracle() {
        let mut rng = seeded(3);
        for _ in 0..10 {
            let ca = random_spd(4, &mut rng);
            let cb = random_spd(4, &mut rng);
            let ma = DVector::from_fn(4, |_, _| rng.random::<f64>());
            let mb = DVector::from_fn(4, |_, _| rng.random::<f64>());
            let a = FeatureStats { mean: ma.clone(), cov: ca.clone(), count: 10 };
            let b = FeatureStats { mean: mb.clone(), cov: cb.clone(), count: 10 };
            let d = frechet_distance(&a, &b).unwrap();
            assert!((d - frechet_distance(&b, &a).unwrap()).abs() < 1e-8);
            let v = DVector::from_fn(4, |_, _| rng.random::<f64>() * 5.0);
            let at = FeatureStats { mean: &ma + &v, ..a.clone() };
            let bt = FeatureStats { mean: &mb + &v, ..b.clone() };
            assert!((d - frechet_distance(&at, &bt).unwrap()).abs() < 1e-8);
            let oracle = (&ma - &mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * denman_beavers(&(&ca * &cb)).trace();
            assert!((d - oracle).abs() < 1e-6, "{d} vs {oracle}");
        }
    }

    #[test]
    fn extractor_is_deterministic_and_row_wise() {
        let spec = crate::data::SyntheticDatasetSpec {
            generator: crate::data::Generator::GaussianBlobs,
            image_size: 16,
            count: 3,
            seed: 4,
        };
        let imgs = spec.generate();
        let ext = FeatureExtractor::random_conv(3, 8, 5);
        let f = ext.extract(&imgs).unwrap();
        assert_eq!(f, FeatureExtractor::random_conv(3, 8, 5).extract(&imgs).unwrap());
        let dup = ext.extract(&[imgs[1].clone(), imgs[0].clone(), imgs[1].clone()]).unwrap();
        assert_eq!(dup.row(0), f.row(1));
        assert_eq!(dup.row(1), f.row(0));
        assert_eq!(dup.row(2), f.row(1));
        assert!(ext.extract(&[]).is_err());
        assert!(ext.extract(&[Image::zeros(16, 16, 1)]).is_err());
    }

    #[test]
    fn reconstructed_set_has_zero_distance_to_itself() {
        use crate::vq::{CodecConfig, VqCodec};
        let codec = VqCodec::new(CodecConfig { hidden: 8, res_hidden: 4, codebook_size: 8, code_dim: 4, ..CodecConfig::default() }, &mut seeded(6)).unwrap();
        let spec = crate::data::SyntheticDatasetSpec {
            generator: crate::data::Generator::ColoredRectangles,
            image_size: 32,
            count: 20,
            seed: 7,
        };
        let real = spec.generate();
        let recon = codec.reconstruct(&real).unwrap();
        let cfg = FidConfig { samples: 20, feature_dim: 8, extractor_seed: 1 };
        let r = eval_fid_images(&codec, &recon, &real, &cfg).unwrap();
        assert!(r.fid_vs_reconstructed_real < 1e-6);
        assert!((r.fid_vs_real - r.recon_fid).abs() < 1e-9);
    }
}
