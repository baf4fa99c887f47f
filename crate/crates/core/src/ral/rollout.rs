use rand::Rng as _;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::prior::{Priors, SampleOptions};
use crate::rng::Rng;
use crate::vq::{CodeGrid, Codes, HierarchicalCodes, VqCodec};

/// How much of a grid a rollout generates. Row counts are in rows of the
/// coarsest grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutMode {
    Full,
    /// The first `k` rows are real codes; the rest are generated.
    ContinueFromReal(usize),
    /// Only the first `k` rows are generated.
    PartialFromScratch(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hierarchy {
    Single,
    Top,
    Bottom,
}

/// One prior's share of a rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub mode: RolloutMode,
    pub level: Hierarchy,
    /// Full or partial grid; positions before `start` were given.
    pub codes: CodeGrid,
    pub condition: Option<CodeGrid>,
    pub start: usize,
    /// `log G(a_t | s_t)` of each generated position.
    pub log_probs: Vec<f64>,
    /// `r_1..r_T`, filled in once the critic has scored the image.
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn generated(&self) -> usize {
        self.codes.len() - self.start
    }
}

#[derive(Clone, Debug)]
pub struct Rollout {
    pub mode: RolloutMode,
    pub codes: Codes,
    pub image: Image,
    pub trajectories: Vec<Trajectory>,
}

/// Smallest row step for partial-from-scratch rollouts whose decoded height
/// is a multiple of the critic stride.
pub fn mode2_granularity(coarse_factor: usize, critic_stride: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    critic_stride / gcd(critic_stride, coarse_factor)
}

/// Picks a rollout mode: continue-from-real with probability `mode1_prob`,
/// otherwise partial-from-scratch, with `k` uniform over the valid rows.
pub fn choose_mode(partial: bool, mode1_prob: f64, rows: usize, granularity: usize, rng: &mut Rng) -> RolloutMode {
    if !partial || rows < 2 {
        return RolloutMode::Full;
    }
    let mode1 = rng.random::<f64>() < mode1_prob;
    let steps = (rows - 1) / granularity;
    if mode1 || steps == 0 {
        RolloutMode::ContinueFromReal(rng.random_range(1..rows))
    } else {
        RolloutMode::PartialFromScratch(granularity * rng.random_range(1..=steps))
    }
}

/// Rollout with a freshly drawn mode; `real_pool` supplies real codes for
/// continue-from-real rollouts.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    priors: &Priors,
    codec: &VqCodec,
    partial: bool,
    mode1_prob: f64,
    granularity: usize,
    real_pool: &[Codes],
    rng: &mut Rng,
) -> Result<Rollout> {
    let mode = choose_mode(partial, mode1_prob, priors.rows(), granularity, rng);
    let real = match mode {
        RolloutMode::ContinueFromReal(_) => {
            if real_pool.is_empty() {
                return Err(Error::InvalidArgument("continue-from-real rollouts need real codes".into()));
            }
            Some(&real_pool[rng.random_range(0..real_pool.len())])
        }
        _ => None,
    };
    rollout_with_mode(priors, codec, mode, real, rng)
}

/// Samples codes in `mode` (one sampling pass per prior) and decodes them.
pub fn rollout_with_mode(priors: &Priors, codec: &VqCodec, mode: RolloutMode, real: Option<&Codes>, rng: &mut Rng) -> Result<Rollout> {
    let rows = priors.rows();
    let (given, out_rows) = match mode {
        RolloutMode::Full => (0, rows),
        RolloutMode::ContinueFromReal(k) if k >= 1 && k < rows => (k, rows),
        RolloutMode::PartialFromScratch(k) if k >= 1 && k < rows => (0, k),
        _ => return Err(Error::InvalidArgument(format!("invalid rollout mode {mode:?} for {rows} rows"))),
    };
    let real = if given > 0 {
        Some(real.ok_or_else(|| Error::InvalidArgument("continue-from-real rollout without real codes".into()))?)
    } else {
        None
    };
    let traj = |level, codes: CodeGrid, condition, start, log_probs| Trajectory {
        mode,
        level,
        codes,
        condition,
        start,
        log_probs,
        rewards: Vec::new(),
    };
    let (codes, trajectories) = match priors {
        Priors::Single(p) => {
            let prefix = match real {
                Some(Codes::Single(g)) => Some(g.prefix_rows(given)),
                Some(_) => return Err(Error::InvalidArgument("hierarchical real codes for a single prior".into())),
                None => None,
            };
            let opts = SampleOptions { prefix: prefix.as_ref(), rows: Some(out_rows), ..Default::default() };
            let (g, lp) = p.sample_traced(rng, opts)?;
            let start = given * g.width();
            (Codes::Single(g.clone()), vec![traj(Hierarchy::Single, g, None, start, lp)])
        }
        Priors::Hierarchical { top, bottom } => {
            let (tpre, bpre) = match real {
                Some(Codes::Hier(h)) => (Some(h.top.prefix_rows(given)), Some(h.bottom.prefix_rows(2 * given))),
                Some(_) => return Err(Error::InvalidArgument("single-level real codes for hierarchical priors".into())),
                None => (None, None),
            };
            let (t, tlp) = top.sample_traced(rng, SampleOptions { prefix: tpre.as_ref(), rows: Some(out_rows), ..Default::default() })?;
            let bopts = SampleOptions { condition: Some(&t), prefix: bpre.as_ref(), rows: Some(2 * out_rows), cached: true };
            let (b, blp) = bottom.sample_traced(rng, bopts)?;
            let tstart = given * t.width();
            let bstart = 2 * given * b.width();
            let trajs = vec![
                traj(Hierarchy::Top, t.clone(), None, tstart, tlp),
                traj(Hierarchy::Bottom, b.clone(), Some(t.clone()), bstart, blp),
            ];
            (Codes::Hier(HierarchicalCodes { top: t, bottom: b }), trajs)
        }
    };
    let image = codec.decode(&codes)?;
    Ok(Rollout { mode, codes, image, trajectories })
}
