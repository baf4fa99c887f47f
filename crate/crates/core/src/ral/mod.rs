//! Reinforced adversarial fine-tuning of code priors: rollouts (full and
//! partial), critic rewards, discounted Q-values and REINFORCE updates.

mod reward;
mod rollout;
mod trainer;

pub use reward::{assign_rewards, normalize_rewards, q_values, resample_map, RewardMode};
pub use rollout::{choose_mode, mode2_granularity, rollout, rollout_with_mode, Hierarchy, Rollout, RolloutMode, Trajectory};
pub use trainer::{policy_gradient, train_ral, RalConfig, RalRecord, RalTrainer, TrainedPriors};
