use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::critic::{Critic, CriticLoss, ScoreMap};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Adam, AdamConfig, ParamSet};
use crate::prior::{PriorNetwork, Priors};
use crate::ral::reward::{assign_rewards, max_abs, q_values, RewardMode};
use crate::ral::rollout::{mode2_granularity, rollout, Hierarchy, Rollout, Trajectory};
use crate::rng::{seeded, Rng};
use crate::vq::{Codes, VqCodec};

/// Which priors of a hierarchical pair receive policy updates. A single
/// prior is always trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainedPriors {
    Top,
    Bottom,
    Both,
}

impl FromStr for TrainedPriors {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top" => Ok(Self::Top),
            "bottom" => Ok(Self::Bottom),
            "both" => Ok(Self::Both),
            _ => Err(Error::Config(format!("unknown trained priors `{s}`"))),
        }
    }
}

impl fmt::Display for TrainedPriors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Top => "top",
            Self::Bottom => "bottom",
            Self::Both => "both",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RalConfig {
    pub gamma: f64,
    pub lambda_gp: f64,
    pub lr_d: f64,
    pub lr_g: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub warmup_d: usize,
    pub d_steps_per_g: usize,
    pub reward_mode: RewardMode,
    pub partial_generation: bool,
    pub mode1_prob: f64,
    pub trained: TrainedPriors,
    /// Generator updates after warmup.
    pub cycles: usize,
}

impl Default for RalConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda_gp: 10.0,
            lr_d: 1e-4,
            lr_g: 4e-6,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 16,
            warmup_d: 100,
            d_steps_per_g: 5,
            reward_mode: RewardMode::Single,
            partial_generation: true,
            mode1_prob: 0.5,
            trained: TrainedPriors::Both,
            cycles: 200,
        }
    }
}

impl RalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("ral gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.mode1_prob) {
            return bad("ral mode1_prob must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.d_steps_per_g == 0 {
            return bad("ral batch_size and d_steps_per_g must be positive");
        }
        if self.lr_d < 0.0 || self.lr_g < 0.0 || self.lambda_gp < 0.0 {
            return bad("ral learning rates and lambda_gp must be nonnegative");
        }
        Ok(())
    }
}

/// Per-cycle training metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RalRecord {
    pub cycle: usize,
    pub mean_reward_real: f64,
    pub mean_reward_fake: f64,
    pub critic_wass: f64,
    pub critic_gp: f64,
    pub gen_objective: f64,
}

/// Accumulates `-(1/n) sum_t Q_t grad log G(a_t | s_t)` over generated
/// positions of `trajectories` into `grads` (a descent direction for the
/// REINFORCE objective) and returns the objective
/// `(1/n) sum_traj sum_t Q_t log G(a_t | s_t)`.
pub fn policy_gradient(prior: &PriorNetwork, trajectories: &[&Trajectory], gamma: f64, grads: &mut ParamSet) -> Result<f64> {
    if trajectories.is_empty() {
        return Ok(0.0);
    }
    let n = trajectories.len() as f64;
    let mut objective = 0.0;
    for t in trajectories {
        if t.rewards.len() != t.generated() || t.log_probs.len() != t.generated() {
            return Err(Error::InvalidArgument("trajectory rewards do not match generated positions".into()));
        }
        let q = q_values(&t.rewards, gamma);
        objective += q.iter().zip(&t.log_probs).map(|(q, l)| q * l).sum::<f64>() / n;
        if q.iter().all(|&v| v == 0.0) {
            continue;
        }
        let mut weights = vec![0.0; t.codes.len()];
        for (w, &qv) in weights[t.start..].iter_mut().zip(&q) {
            *w = -qv / n;
        }
        prior.accumulate_logprob_grad(&t.codes, t.condition.as_ref(), &weights, grads)?;
    }
    Ok(objective)
}

/// Warmup, then alternating critic and policy updates.
#[derive(Debug)]
pub struct RalTrainer<'a> {
    codec: &'a VqCodec,
    cfg: RalConfig,
    real_recon: Vec<Image>,
    real_codes: Vec<Codes>,
    granularity: usize,
    opt_top: Adam,
    opt_bottom: Option<Adam>,
    rng: Rng,
    cycle: usize,
    critic_history: Vec<CriticLoss>,
}

impl<'a> RalTrainer<'a> {
    /// `real` are training images; the critic sees their reconstructions.
    pub fn new(codec: &'a VqCodec, priors: &Priors, critic: &mut Critic, real: &[Image], cfg: RalConfig, seed: u64) -> Result<Self> {
        if real.is_empty() {
            return Err(Error::Config("ral training needs real images".into()));
        }
        let codes = codec.encode_codes(real)?;
        Self::from_codes(codec, priors, critic, codes, cfg, seed)
    }

    /// Real data given as code grids; the critic sees their decodings.
    pub fn from_codes(codec: &'a VqCodec, priors: &Priors, critic: &mut Critic, real_codes: Vec<Codes>, cfg: RalConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if real_codes.is_empty() {
            return Err(Error::Config("ral training needs real data".into()));
        }
        let coarse_factor = match priors {
            Priors::Single(_) if codec.is_hierarchical() => {
                return Err(Error::InvalidArgument("single prior with a hierarchical codec".into()));
            }
            Priors::Hierarchical { .. } if !codec.is_hierarchical() => {
                return Err(Error::InvalidArgument("hierarchical priors with a single-level codec".into()));
            }
            Priors::Single(_) => codec.config().factor(),
            Priors::Hierarchical { .. } => codec.config().top_factor(),
        };
        let mut real_recon = Vec::with_capacity(real_codes.len());
        for chunk in real_codes.chunks(64) {
            real_recon.extend(codec.decode_batch(chunk)?);
        }
        critic.configure_training(cfg.lambda_gp, cfg.lr_d, cfg.beta1, cfg.beta2);
        let adam = |p: &PriorNetwork| Adam::new(AdamConfig::new(cfg.lr_g, cfg.beta1, cfg.beta2), p.params());
        let (opt_top, opt_bottom) = match priors {
            Priors::Single(p) => (adam(p), None),
            Priors::Hierarchical { top, bottom } => (adam(top), Some(adam(bottom))),
        };
        let granularity = mode2_granularity(coarse_factor, critic.config().stride());
        Ok(Self { codec, cfg, real_recon, real_codes, granularity, opt_top, opt_bottom, rng: seeded(seed), cycle: 0, critic_history: Vec::new() })
    }

    pub fn config(&self) -> &RalConfig {
        &self.cfg
    }

    /// Every critic update so far, warmup included.
    pub fn critic_history(&self) -> &[CriticLoss] {
        &self.critic_history
    }

    /// Reconstructed training images (the critic's real side).
    pub fn real_reconstructions(&self) -> &[Image] {
        &self.real_recon
    }

    fn rollouts(&mut self, priors: &Priors) -> Result<Vec<Rollout>> {
        (0..self.cfg.batch_size)
            .map(|_| {
                rollout(
                    priors,
                    self.codec,
                    self.cfg.partial_generation,
                    self.cfg.mode1_prob,
                    self.granularity,
                    &self.real_codes,
                    &mut self.rng,
                )
            })
            .collect()
    }

    /// Reconstructed real images cropped to the heights of `fakes`.
    fn real_side(&mut self, fakes: &[&Image]) -> Vec<Image> {
        fakes
            .iter()
            .map(|f| {
                let r = &self.real_recon[self.rng.random_range(0..self.real_recon.len())];
                r.crop_rows(f.height())
            })
            .collect()
    }

    fn critic_step(&mut self, priors: &Priors, critic: &mut Critic) -> Result<CriticLoss> {
        let fakes: Vec<Image> = self.rollouts(priors)?.into_iter().map(|r| r.image).collect();
        let real = self.real_side(&fakes.iter().collect::<Vec<_>>());
        let loss = critic.update_images(&real, &fakes, &mut self.rng)?;
        self.critic_history.push(loss);
        Ok(loss)
    }

    /// Critic-only updates before policy training starts.
    pub fn warmup(&mut self, priors: &Priors, critic: &mut Critic) -> Result<Vec<CriticLoss>> {
        (0..self.cfg.warmup_d).map(|_| self.critic_step(priors, critic)).collect()
    }

    /// `d_steps_per_g` critic updates followed by one policy update of each
    /// trained prior.
    pub fn cycle(&mut self, priors: &mut Priors, critic: &mut Critic) -> Result<RalRecord> {
        let mut last = CriticLoss::default();
        for _ in 0..self.cfg.d_steps_per_g {
            last = self.critic_step(priors, critic)?;
        }
        let mut rollouts = self.rollouts(priors)?;
        let fakes: Vec<&Image> = rollouts.iter().map(|r| &r.image).collect();
        let reals = self.real_side(&fakes);
        let fake_maps: Vec<ScoreMap> = fakes.iter().map(|i| critic.score_map(i)).collect::<Result<_>>()?;
        let real_maps: Vec<ScoreMap> = reals.iter().map(|i| critic.score_map(i)).collect::<Result<_>>()?;

        let raw: Vec<f64> = match self.cfg.reward_mode {
            RewardMode::Single => fake_maps.iter().chain(&real_maps).map(ScoreMap::mean).collect(),
            RewardMode::Intermediate => fake_maps.iter().chain(&real_maps).flat_map(|m| m.values.iter().copied()).collect(),
        };
        let scale = max_abs(&raw);
        let normalize = |m: &ScoreMap| ScoreMap {
            rows: m.rows,
            cols: m.cols,
            values: m.values.iter().map(|v| if scale == 0.0 { 0.0 } else { (v / scale).clamp(-1.0, 1.0) }).collect(),
        };
        let mean_of = |maps: &[ScoreMap]| maps.iter().map(|m| normalize(m).mean()).sum::<f64>() / maps.len() as f64;
        let mean_reward_fake = mean_of(&fake_maps);
        let mean_reward_real = mean_of(&real_maps);

        for (r, m) in rollouts.iter_mut().zip(&fake_maps) {
            let nm = normalize(m);
            for t in &mut r.trajectories {
                t.rewards = assign_rewards(&nm, t.codes.height(), t.codes.width(), t.start, self.cfg.reward_mode)?;
            }
        }

        let trained = self.cfg.trained;
        let gamma = self.cfg.gamma;
        let pick = |level: Hierarchy| -> Vec<&Trajectory> {
            rollouts.iter().flat_map(|r| r.trajectories.iter()).filter(|t| t.level == level).collect()
        };
        let mut gen_objective = 0.0;
        match priors {
            Priors::Single(p) => {
                gen_objective += update(p, &pick(Hierarchy::Single), gamma, &mut self.opt_top)?;
            }
            Priors::Hierarchical { top, bottom } => {
                // both gradients are taken at the pre-update parameters
                let top_trajs = pick(Hierarchy::Top);
                let bottom_trajs = pick(Hierarchy::Bottom);
                if trained != TrainedPriors::Bottom {
                    gen_objective += update(top, &top_trajs, gamma, &mut self.opt_top)?;
                }
                if trained != TrainedPriors::Top {
                    let opt = self.opt_bottom.as_mut().expect("bottom optimizer");
                    gen_objective += update(bottom, &bottom_trajs, gamma, opt)?;
                }
            }
        }
        let rec = RalRecord {
            cycle: self.cycle,
            mean_reward_real,
            mean_reward_fake,
            critic_wass: last.wasserstein,
            critic_gp: last.penalty,
            gen_objective,
        };
        self.cycle += 1;
        Ok(rec)
    }
}

fn update(prior: &mut PriorNetwork, trajs: &[&Trajectory], gamma: f64, opt: &mut Adam) -> Result<f64> {
    let mut grads = prior.params().zeros_like();
    let objective = policy_gradient(prior, trajs, gamma, &mut grads)?;
    if !objective.is_finite() || !grads.all_finite() {
        return Err(Error::NonFinite(format!("policy gradient diverged (objective {objective})")));
    }
    opt.step(prior.params_mut(), &grads)?;
    Ok(objective)
}

/// Runs warmup and `cfg.cycles` cycles; returns one record per cycle.
pub fn train_ral(
    codec: &VqCodec,
    priors: &mut Priors,
    critic: &mut Critic,
    real: &[Image],
    cfg: &RalConfig,
    seed: u64,
) -> Result<Vec<RalRecord>> {
    let mut trainer = RalTrainer::new(codec, priors, critic, real, cfg.clone(), seed)?;
    trainer.warmup(priors, critic)?;
    (0..cfg.cycles).map(|_| trainer.cycle(priors, critic)).collect()
}
