use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::ActionMode;

/// The five training algorithms compared in the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Single action per step, actor-critic only.
    SapsTd,
    /// Multi-action, actor-critic only.
    MapsTd,
    /// Multi-action actor-critic plus the decaying expert term.
    Mail,
    /// As `Mail` with the slow decay horizon.
    MailSlowDecay,
    /// Expert term only, rollouts collected for evaluation.
    IlOnly,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::SapsTd,
        Mode::MapsTd,
        Mode::Mail,
        Mode::MailSlowDecay,
        Mode::IlOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::SapsTd => "saps-td",
            Mode::MapsTd => "maps-td",
            Mode::Mail => "mail",
            Mode::MailSlowDecay => "mail-slow-decay",
            Mode::IlOnly => "il-only",
        }
    }

    pub fn action_mode(self) -> ActionMode {
        match self {
            Mode::SapsTd => ActionMode::Saps,
            _ => ActionMode::Maps,
        }
    }

    pub fn needs_expert(self) -> bool {
        matches!(self, Mode::Mail | Mode::MailSlowDecay | Mode::IlOnly)
    }

    pub fn uses_td(self) -> bool {
        self != Mode::IlOnly
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown mode `{s}` (expected one of {})",
                    Mode::ALL.map(Mode::name).join(", ")
                ))
            })
    }
}

/// All trainer hyperparameters. Steps count environment transitions summed
/// over actors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub seed: u64,
    pub gamma: f64,
    pub actors: usize,
    pub rollout_len: usize,
    /// Share of each mixed batch drawn from demonstrations.
    pub expert_fraction: f64,
    pub lambda0: f64,
    /// Step at which the expert weight starts to decay.
    pub lambda_decay_start: u64,
    pub lambda_decay_fast: u64,
    pub lambda_decay_slow: u64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub clip_norm: f64,
    pub total_steps: u64,
    pub hidden: usize,
    pub frame_stack: usize,
    pub obs_noise: f64,
    pub feat_noise: f64,
    pub expert_dropout: f64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    pub greedy_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mail,
            seed: 0,
            gamma: 0.99,
            actors: 4,
            rollout_len: 20,
            expert_fraction: 0.5,
            lambda0: 1.0,
            lambda_decay_start: 0,
            lambda_decay_fast: 400_000,
            lambda_decay_slow: 1_200_000,
            value_coef: 0.5,
            entropy_coef: 0.01,
            lr_start: 1e-4,
            lr_end: 1e-5,
            clip_norm: 0.5,
            total_steps: 2_000_000,
            hidden: 128,
            frame_stack: 4,
            obs_noise: 0.1,
            feat_noise: 0.3,
            expert_dropout: 0.5,
            eval_interval: 50_000,
            eval_episodes: 5,
            eval_seed: 1_000_000,
            greedy_threshold: 0.5,
        }
    }
}

/// Coefficients applied to each loss component at one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub live: f64,
    pub lambda: f64,
    /// Multiplies the per-sample mean expert cross-entropy so that it is
    /// normalised per rollout like the live term (`K_E / M`).
    pub expert_scale: f64,
    pub value: f64,
    pub entropy: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.actors == 0 || self.rollout_len == 0 || self.hidden == 0 || self.frame_stack == 0 {
            return bad("actors, rollout_len, hidden and frame_stack must be positive".into());
        }
        if !(0.0..1.0).contains(&self.expert_fraction) {
            return bad(format!(
                "expert_fraction must lie in [0, 1), got {}",
                self.expert_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda0) {
            return bad(format!("lambda0 must lie in [0, 1], got {}", self.lambda0));
        }
        if self.lambda_decay_fast == 0 || self.lambda_decay_slow == 0 {
            return bad("lambda decay durations must be positive".into());
        }
        if !(0.0..1.0).contains(&self.expert_dropout) {
            return bad(format!(
                "expert_dropout must lie in [0, 1), got {}",
                self.expert_dropout
            ));
        }
        if self.clip_norm <= 0.0 || self.lr_start <= 0.0 || self.lr_end < 0.0 {
            return bad("clip_norm and learning rates must be positive".into());
        }
        if self.eval_episodes == 0 || self.eval_interval == 0 {
            return bad("eval_episodes and eval_interval must be positive".into());
        }
        if self.obs_noise < 0.0 || self.feat_noise < 0.0 {
            return bad("noise standard deviations must be non-negative".into());
        }
        Ok(())
    }

    /// Live transitions per update.
    pub fn batch_size(&self) -> usize {
        self.actors * self.rollout_len
    }

    /// Demonstrations per update, so that they make up `expert_fraction` of
    /// the mixed batch. Expert-only training uses one live-batch worth.
    pub fn expert_batch_size(&self) -> usize {
        match self.mode {
            Mode::IlOnly => self.batch_size(),
            _ => {
                let f = self.expert_fraction;
                (self.batch_size() as f64 * f / (1.0 - f)).round() as usize
            }
        }
    }

    pub fn decay_steps(&self) -> u64 {
        match self.mode {
            Mode::MailSlowDecay => self.lambda_decay_slow,
            _ => self.lambda_decay_fast,
        }
    }

    /// Expert weight at `step` for the configured mode.
    pub fn lambda(&self, step: u64) -> f64 {
        match self.mode {
            Mode::SapsTd | Mode::MapsTd => 0.0,
            Mode::IlOnly => 1.0,
            Mode::Mail | Mode::MailSlowDecay => lambda_schedule(
                step.saturating_sub(self.lambda_decay_start),
                self.decay_steps(),
                self.lambda0,
            ),
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        lr_schedule(step, self.total_steps, self.lr_start, self.lr_end)
    }

    pub fn weights(&self, step: u64) -> LossWeights {
        let td = if self.mode.uses_td() { 1.0 } else { 0.0 };
        LossWeights {
            live: td,
            lambda: self.lambda(step),
            expert_scale: self.expert_batch_size() as f64 / self.actors as f64,
            value: td * self.value_coef,
            entropy: td * self.entropy_coef,
        }
    }
}

/// `lambda0 * max(0, 1 - t / d)`.
pub fn lambda_schedule(t: u64, d: u64, lambda0: f64) -> f64 {
    assert!(d > 0, "decay duration must be positive");
    lambda0 * (1.0 - t as f64 / d as f64).max(0.0)
}

/// Linear interpolation from `start` to `end` over `total` steps, then flat.
pub fn lr_schedule(t: u64, total: u64, start: f64, end: f64) -> f64 {
    if t >= total {
        return end;
    }
    let frac = (t as f64 / total as f64).min(1.0);
    start + (end - start) * frac
}
