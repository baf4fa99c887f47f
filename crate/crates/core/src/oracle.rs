//! Synthetic-oracle benchmark: a fixed prior defines the data distribution
//! over code grids and students are scored by the oracle's NLL of their
//! samples.

use crate::critic::{Critic, CriticConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{eval_fid_images, FidConfig};
use crate::prior::{MleTrainConfig, MleTrainer, PriorConfig, PriorNetwork, Priors, SampleOptions};
use crate::ral::{RalConfig, RalTrainer};
use crate::rng::{derive_seed, seeded, substream};
use crate::vq::{CodeGrid, Codes, VqCodec};

#[derive(Clone, Debug, PartialEq)]
pub enum OracleSource {
    /// Random parameters with the output logits multiplied by `logit_scale`.
    RandomInit { logit_scale: f64 },
    /// Maximum-likelihood training on a grid dataset.
    TrainedOnData(MleTrainConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSpec {
    pub source: OracleSource,
    pub config: PriorConfig,
}

/// Oracle architecture for a grid: twice the student's hidden units.
pub fn oracle_preset(height: usize, width: usize, codebook_size: usize) -> PriorConfig {
    PriorConfig { height, width, codebook_size, channels: 64, layers: 4, kernel: 3, out_hidden: 64, condition: None }
}

/// Student architecture for a grid.
pub fn student_preset(height: usize, width: usize, codebook_size: usize) -> PriorConfig {
    PriorConfig { height, width, codebook_size, channels: 32, layers: 4, kernel: 3, out_hidden: 32, condition: None }
}

pub fn build_oracle(spec: &OracleSpec, data: Option<&[CodeGrid]>, seed: u64) -> Result<PriorNetwork> {
    let mut net = PriorNetwork::new(spec.config.clone(), &mut seeded(seed))?;
    match &spec.source {
        OracleSource::RandomInit { logit_scale } => {
            if data.is_some() {
                return Err(Error::InvalidArgument("a randomly initialized oracle takes no dataset".into()));
            }
            for name in ["out2.weight", "out2.bias"] {
                let i = net.params().index_of(name).expect("output layer");
                net.params_mut().get_mut(i).scale(*logit_scale);
            }
        }
        OracleSource::TrainedOnData(train) => {
            let grids = data.ok_or_else(|| Error::Config("a trained oracle needs a grid dataset".into()))?;
            let mut trainer = MleTrainer::new(&net, grids, None, train, derive_seed(seed, "oracle-train"))?;
            for _ in 0..train.steps {
                trainer.step(&mut net)?;
            }
        }
    }
    Ok(net)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NllEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Monte-Carlo estimate of `-E_{c ~ student} log G_oracle(c)` in nats.
pub fn nll_oracle(oracle: &PriorNetwork, student: &PriorNetwork, samples: usize, seed: u64) -> Result<NllEstimate> {
    let (o, s) = (oracle.config(), student.config());
    if (o.height, o.width, o.codebook_size) != (s.height, s.width, s.codebook_size) {
        return Err(Error::Shape("oracle and student geometries differ".into()));
    }
    if samples < 2 {
        return Err(Error::InvalidArgument("nll_oracle needs at least 2 samples".into()));
    }
    let vals = crate::parallel::map_indexed(samples, |i| {
        let g = student.sample(&mut substream(seed, i as u64), SampleOptions::default())?;
        oracle.nll(&g, None)
    })?;
    let n = samples as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(NllEstimate { mean, stderr: (var / n).sqrt(), samples })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleExperimentConfig {
    pub oracle: OracleSpec,
    pub student: PriorConfig,
    pub train_grids: usize,
    pub mle: MleTrainConfig,
    pub ral: RalConfig,
    pub critic: CriticConfig,
    /// Iterations between NLL evaluations (MLE steps or RAL cycles).
    pub eval_every: usize,
    pub eval_samples: usize,
    pub fid: FidConfig,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NllPoint {
    pub iteration: usize,
    pub nll: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSummary {
    pub nll_mle: NllEstimate,
    pub nll_ral: NllEstimate,
    pub fid_oracle_mle: f64,
    pub fid_oracle_ral: f64,
    pub fid_real_mle: f64,
    pub fid_real_ral: f64,
    pub oracle_checksum: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub mle_curve: Vec<NllPoint>,
    pub ral_curve: Vec<NllPoint>,
    pub summary: OracleSummary,
}

/// Builds the oracle, trains a student by MLE on oracle samples, fine-tunes
/// it with RAL against decoded oracle samples and tracks oracle NLL
/// throughout. `train` feeds a trained oracle; `reference` is the held-out
/// real-image set for the last metric.
pub fn oracle_experiment(
    codec: &VqCodec,
    train: &[Image],
    reference: &[Image],
    cfg: &OracleExperimentConfig,
    seed: u64,
) -> Result<OracleReport> {
    if codec.is_hierarchical() {
        return Err(Error::InvalidArgument("the oracle experiment uses a single-level codec".into()));
    }
    let (gh, gw) = codec.config().grid_dims();
    let o = &cfg.oracle.config;
    if (o.height, o.width, o.codebook_size) != (gh, gw, codec.config().codebook_size) {
        return Err(Error::Shape("oracle geometry does not match the codec".into()));
    }
    if cfg.eval_every == 0 || cfg.train_grids == 0 {
        return Err(Error::Config("oracle eval_every and train_grids must be positive".into()));
    }
    let data_grids: Option<Vec<CodeGrid>> = match cfg.oracle.source {
        OracleSource::TrainedOnData(_) => Some(
            codec
                .encode_codes(train)?
                .into_iter()
                .map(|c| match c {
                    Codes::Single(g) => g,
                    Codes::Hier(_) => unreachable!("single-level codec"),
                })
                .collect(),
        ),
        OracleSource::RandomInit { .. } => None,
    };
    let oracle = build_oracle(&cfg.oracle, data_grids.as_deref(), derive_seed(seed, "oracle"))?;
    let checksum = oracle.params().checksum();

    let train_seed = derive_seed(seed, "oracle-samples");
    let grids = crate::parallel::map_indexed(cfg.train_grids, |i| {
        oracle.sample(&mut substream(train_seed, i as u64), SampleOptions::default())
    })?;

    let eval_seed = derive_seed(seed, "oracle-eval");
    let mut student = PriorNetwork::new(cfg.student.clone(), &mut seeded(derive_seed(seed, "student")))?;
    let mut mle_curve = Vec::new();
    let mut trainer = MleTrainer::new(&student, &grids, None, &cfg.mle, derive_seed(seed, "student-mle"))?;
    for it in 0..=cfg.mle.steps {
        if it % cfg.eval_every == 0 || it == cfg.mle.steps {
            let e = nll_oracle(&oracle, &student, cfg.eval_samples, eval_seed)?;
            mle_curve.push(NllPoint { iteration: it, nll: e.mean, stderr: e.stderr });
        }
        if it < cfg.mle.steps {
            trainer.step(&mut student)?;
        }
    }
    let nll_mle = nll_oracle(&oracle, &student, cfg.eval_samples, eval_seed)?;

    let oracle_images = crate::metrics::sample_images(codec, &Priors::Single(oracle.clone()), cfg.fid.samples, derive_seed(seed, "oracle-fid"))?;
    let fid_seed = derive_seed(seed, "student-fid");
    let mle_priors = Priors::Single(student.clone());
    let mle_images = crate::metrics::sample_images(codec, &mle_priors, cfg.fid.samples, fid_seed)?;
    let fid_oracle_mle = eval_fid_images(codec, &mle_images, &oracle_images, &cfg.fid)?.fid_vs_real;
    let fid_real_mle = eval_fid_images(codec, &mle_images, reference, &cfg.fid)?.fid_vs_reconstructed_real;

    let real_codes: Vec<Codes> = grids.iter().cloned().map(Codes::Single).collect();
    let mut priors = mle_priors;
    let mut critic = Critic::new(cfg.critic.clone(), &mut seeded(derive_seed(seed, "critic")))?;
    let mut ral = RalTrainer::from_codes(codec, &priors, &mut critic, real_codes, cfg.ral.clone(), derive_seed(seed, "ral"))?;
    ral.warmup(&priors, &mut critic)?;
    let mut ral_curve = Vec::new();
    for it in 0..=cfg.ral.cycles {
        if it % cfg.eval_every == 0 || it == cfg.ral.cycles {
            let Priors::Single(s) = &priors else { unreachable!() };
            let e = nll_oracle(&oracle, s, cfg.eval_samples, eval_seed)?;
            ral_curve.push(NllPoint { iteration: it, nll: e.mean, stderr: e.stderr });
        }
        if it < cfg.ral.cycles {
            ral.cycle(&mut priors, &mut critic)?;
        }
    }
    let Priors::Single(s) = &priors else { unreachable!() };
    let nll_ral = nll_oracle(&oracle, s, cfg.eval_samples, eval_seed)?;
    let ral_images = crate::metrics::sample_images(codec, &priors, cfg.fid.samples, fid_seed)?;
    let fid_oracle_ral = eval_fid_images(codec, &ral_images, &oracle_images, &cfg.fid)?.fid_vs_real;
    let fid_real_ral = eval_fid_images(codec, &ral_images, reference, &cfg.fid)?.fid_vs_reconstructed_real;

    if oracle.params().checksum() != checksum {
        return Err(Error::InvalidArgument("oracle parameters changed during the experiment".into()));
    }
    Ok(OracleReport {
        mle_curve,
        ral_curve,
        summary: OracleSummary { nll_mle, nll_ral, fid_oracle_mle, fid_oracle_ral, fid_real_mle, fid_real_ral, oracle_checksum: checksum },
    })
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;

    fn all_grids(h: usize, w: usize, k: usize) -> Vec<CodeGrid> {
        let n = h * w;
        (0..k.pow(n as u32))
            .map(|mut idx| {
                let codes = (0..n)
                    .map(|_| {
                        let c = idx % k;
                        idx /= k;
                        c
                    })
                    .collect();
                CodeGrid::new(h, w, codes).unwrap()
            })
            .collect()
    }

    fn tiny(k: usize) -> PriorConfig {
        PriorConfig { height: 2, width: 2, codebook_size: k, channels: 8, layers: 2, kernel: 3, out_hidden: 8, condition: None }
    }

    fn random_oracle(seed: u64) -> PriorNetwork {
        build_oracle(&OracleSpec { source: OracleSource::RandomInit { logit_scale: 2.0 }, config: tiny(3) }, None, seed).unwrap()
    }

    #[test]
    fn random_oracle_is_reproducible() {
        let a = random_oracle(1);
        let b = random_oracle(1);
        for s in 0..5 {
            assert_eq!(a.sample(&mut seeded(s), SampleOptions::default()).unwrap(), b.sample(&mut seeded(s), SampleOptions::default()).unwrap());
        }
        let spec = OracleSpec { source: OracleSource::TrainedOnData(MleTrainConfig::default()), config: tiny(3) };
        assert!(matches!(build_oracle(&spec, None, 0), Err(Error::Config(_))));
    }

    #[test]
    fn student_preset_is_smaller() {
        let o = PriorNetwork::new(oracle_preset(8, 8, 64), &mut seeded(0)).unwrap();
        let s = PriorNetwork::new(student_preset(8, 8, 64), &mut seeded(0)).unwrap();
        assert!(s.params().numel() < o.params().numel());
    }

    #[test]
    fn uniform_pair_gives_closed_form() {
        let mut o = PriorNetwork::new(tiny(4), &mut seeded(0)).unwrap();
        o.zero_output_layer();
        let e = nll_oracle(&o, &o, 50, 1).unwrap();
        assert!((e.mean - 4.0 * 4f64.ln()).abs() < 1e-12);
        assert!(e.stderr < 1e-12);
    }

    #[test]
    fn monte_carlo_matches_enumerated_cross_entropy() {
        let oracle = random_oracle(2);
        let mut student = PriorNetwork::new(tiny(3), &mut seeded(3)).unwrap();
        let mut rng = seeded(4);
        for i in 0..student.params().numel() {
            *student.params_mut().scalar_mut(i) += 0.5 * (rng.random::<f64>() - 0.5);
        }
        let grids = all_grids(2, 2, 3);
        let cross: f64 = grids.iter().map(|g| (-student.nll(g, None).unwrap()).exp() * oracle.nll(g, None).unwrap()).sum();
        let e = nll_oracle(&oracle, &student, 50_000, 5).unwrap();
        assert!((e.mean - cross).abs() < 3.0 * e.stderr, "{} vs {cross} (se {})", e.mean, e.stderr);

        let entropy: f64 = grids.iter().map(|g| {
            let nll = oracle.nll(g, None).unwrap();
            (-nll).exp() * nll
        }).sum();
        let self_est = nll_oracle(&oracle, &oracle, 50_000, 6).unwrap();
        assert!((self_est.mean - entropy).abs() < 3.0 * self_est.stderr);
        assert!(nll_oracle(&oracle, &PriorNetwork::new(tiny(4), &mut seeded(0)).unwrap(), 10, 0).is_err());
    }

    #[test]
    fn trained_oracle_reaches_target_entropy() {
        let grids = all_grids(2, 2, 3);
        let mut rng = seeded(7);
        let energy: Vec<f64> = (0..81).map(|_| rng.random::<f64>() * 3.0).collect();
        let z: f64 = energy.iter().map(|e| e.exp()).sum();
        let probs: Vec<f64> = energy.iter().map(|e| e.exp() / z).collect();
        let entropy = -probs.iter().map(|p| p * p.ln()).sum::<f64>();
        let mut data = Vec::new();
        for _ in 0..20_000 {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let idx = probs.iter().position(|p| {
                acc += p;
                u < acc
            });
            data.push(grids[idx.unwrap_or(80)].clone());
        }
        let spec = OracleSpec {
            source: OracleSource::TrainedOnData(MleTrainConfig { steps: 1500, batch_size: 16, lr: 3e-3 }),
            config: PriorConfig { channels: 16, out_hidden: 16, ..tiny(3) },
        };
        let oracle = build_oracle(&spec, Some(&data), 8).unwrap();
        let nll: f64 = grids.iter().zip(&probs).map(|(g, p)| p * oracle.nll(g, None).unwrap()).sum();
        assert!(nll - entropy < 0.1, "{nll} vs {entropy}");
    }
}
