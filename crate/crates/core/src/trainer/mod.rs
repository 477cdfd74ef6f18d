//! Batched synchronous actor-critic with the combined expert update and the
//! five-way ablation switch.

mod config;
mod rollout;
mod train;
mod update;

pub use config::{lambda_schedule, lr_schedule, LossWeights, Mode, TrainConfig};
pub use rollout::{
    collect_rollouts, evaluate_greedy, to_live_batch, ActionSelect, Actor, EvalResult, Rollout,
};
pub use train::{build_network, MetricsRow, Trainer};
pub use update::{
    advantages, build_loss, compute_gradients, entropy_bonus, mail_update, n_step_returns,
    policy_loss_expert, policy_loss_live, value_loss, LiveBatch, LossVars, UpdateMetrics,
};
