use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{Mode, TrainConfig};
use super::rollout::{
    collect_rollouts, evaluate_greedy, to_live_batch, ActionSelect, Actor, EvalResult,
};
use super::update::{mail_update, UpdateMetrics};
use crate::arena::{Arena, EnvConfig, CHANNELS, N_ACTIONS};
use crate::error::{Error, Result};
use crate::expert_data::{DemoDataset, ExpertSampler, NoiseConfig};
use crate::numerics::{Checkpoint, ParameterStore};
use crate::policy::{NetShape, PolicyNet};

/// One line of the metrics stream, written at every evaluation point. Loss
/// columns average the updates since the previous row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: u64,
    pub mode: String,
    pub seed: u64,
    pub eval_score_mean: f64,
    pub eval_score_std: f64,
    pub policy_live: f64,
    pub policy_expert: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    pub lambda_e: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub actions_per_step: f64,
}

#[derive(Debug, Default, Clone, Copy)]
struct Running {
    sum: UpdateMetrics,
    n: usize,
}

impl Running {
    fn push(&mut self, m: &UpdateMetrics) {
        let s = &mut self.sum;
        s.total += m.total;
        s.policy_live += m.policy_live;
        s.policy_expert += m.policy_expert;
        s.value += m.value;
        s.entropy += m.entropy;
        s.grad_norm += m.grad_norm;
        self.n += 1;
    }

    fn mean(&self) -> UpdateMetrics {
        let k = self.n.max(1) as f64;
        let s = &self.sum;
        UpdateMetrics {
            total: s.total / k,
            policy_live: s.policy_live / k,
            policy_expert: s.policy_expert / k,
            value: s.value / k,
            entropy: s.entropy / k,
            grad_norm: s.grad_norm / k,
            lambda: 0.0,
            lr: 0.0,
        }
    }
}

/// Network construction shared by the trainer and anything that reloads a
/// checkpoint.
pub fn build_network(cfg: &TrainConfig, env: &EnvConfig) -> Result<(PolicyNet, ParameterStore)> {
    let shape = NetShape {
        obs_dim: cfg.frame_stack * CHANNELS * env.view_size * env.view_size,
        feat_dim: 2,
        hidden: cfg.hidden,
        n_actions: N_ACTIONS,
        mode: cfg.mode.action_mode(),
    };
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = PolicyNet::new(&mut store, shape, &mut rng)?;
    Ok((net, store))
}

/// Owns the parameters, the actors and the optional demonstration set.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub arena: Arena,
    pub net: PolicyNet,
    pub store: ParameterStore,
    actors: Vec<Actor>,
    expert: Option<(DemoDataset, ExpertSampler)>,
    steps: u64,
    updates: u64,
    running: Running,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, env: EnvConfig, expert: Option<DemoDataset>) -> Result<Self> {
        cfg.validate()?;
        let arena = Arena::new(env)?;
        if cfg.mode.needs_expert() && expert.is_none() {
            return Err(Error::Config(format!(
                "mode `{}` needs an expert dataset; record one with `mail record-scripted` and pass --expert-path",
                cfg.mode
            )));
        }
        let expert = match expert {
            Some(ds) if cfg.mode.needs_expert() => {
                let view = arena.config().view_size;
                if ds.meta.view != view
                    || ds.meta.channels != CHANNELS
                    || ds.meta.n_actions != N_ACTIONS
                {
                    return Err(Error::Config(format!(
                        "expert dataset has view {} / {} channels / {} actions, arena uses {view} / {CHANNELS} / {N_ACTIONS}",
                        ds.meta.view, ds.meta.channels, ds.meta.n_actions
                    )));
                }
                let sampler = ExpertSampler::new(&ds, cfg.frame_stack)?;
                if sampler.train_len() < cfg.expert_batch_size() {
                    return Err(Error::Config(format!(
                        "expert training split has {} samples, fewer than the expert batch of {}",
                        sampler.train_len(),
                        cfg.expert_batch_size()
                    )));
                }
                Some((ds, sampler))
            }
            _ => None,
        };
        let (net, store) = build_network(&cfg, arena.config())?;
        let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xac70_75ee_d000_0000);
        let actors = (0..cfg.actors)
            .map(|_| Actor::new(&arena, seeds.random(), cfg.frame_stack))
            .collect();
        Ok(Self {
            cfg,
            arena,
            net,
            store,
            actors,
            expert,
            steps: 0,
            updates: 0,
            running: Running::default(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn mode(&self) -> Mode {
        self.cfg.mode
    }

    /// Episode returns finished by the training actors so far.
    pub fn training_returns(&self) -> Vec<f64> {
        self.actors
            .iter()
            .flat_map(|a| a.finished.iter().copied())
            .collect()
    }

    /// Fresh stream per update so a resumed run draws the same numbers.
    fn update_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(self.updates + 1);
        rng
    }

    /// Collects one round of rollouts and applies one combined update.
    pub fn update_once(&mut self) -> Result<UpdateMetrics> {
        let mut rng = self.update_rng();
        let cfg = &self.cfg;
        let rollouts = collect_rollouts(
            &self.arena,
            &self.net,
            &self.store,
            &mut self.actors,
            cfg.rollout_len,
            ActionSelect::Sample,
            &mut rng,
        )?;
        let live = to_live_batch(&rollouts, cfg.gamma);
        let expert = match &self.expert {
            Some((ds, sampler)) if cfg.lambda(self.steps) > 0.0 => Some(sampler.sample(
                ds,
                cfg.expert_batch_size(),
                &mut rng,
                NoiseConfig {
                    obs_std: cfg.obs_noise,
                    feat_std: cfg.feat_noise,
                },
            )?),
            _ => None,
        };
        let m = mail_update(
            &self.net,
            &mut self.store,
            Some(&live),
            expert.as_ref(),
            cfg,
            self.steps,
            &mut rng,
        )
        .map_err(|e| e.with_context(format!("update {}", self.updates)))?;
        self.steps += live.len() as u64;
        self.updates += 1;
        self.running.push(&m);
        Ok(m)
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.cfg.eval_episodes as u64)
            .map(|k| self.cfg.eval_seed + k)
            .collect()
    }

    pub fn evaluate(&self) -> Result<EvalResult> {
        evaluate_greedy(
            &self.arena,
            &self.net,
            &self.store,
            &self.eval_seeds(),
            self.cfg.frame_stack,
            self.cfg.greedy_threshold,
        )
    }

    fn row(&mut self, eval: &EvalResult) -> MetricsRow {
        let m = self.running.mean();
        self.running = Running::default();
        MetricsRow {
            step: self.steps,
            mode: self.cfg.mode.name().to_string(),
            seed: self.cfg.seed,
            eval_score_mean: eval.mean,
            eval_score_std: eval.std,
            policy_live: m.policy_live,
            policy_expert: m.policy_expert,
            value: m.value,
            entropy: m.entropy,
            total: m.total,
            lambda_e: self.cfg.lambda(self.steps),
            lr: self.cfg.lr(self.steps),
            grad_norm: m.grad_norm,
            actions_per_step: eval.actions_per_step,
        }
    }

    /// Trains to `total_steps`, evaluating at the current step, every
    /// `eval_interval` steps and at the end.
    pub fn run(&mut self, mut on_row: impl FnMut(&MetricsRow)) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        let eval = self.evaluate()?;
        let r = self.row(&eval);
        on_row(&r);
        rows.push(r);
        let interval = self.cfg.eval_interval;
        let mut next_eval = (self.steps / interval + 1) * interval;
        while self.steps < self.cfg.total_steps {
            self.update_once()?;
            if self.steps >= next_eval || self.steps >= self.cfg.total_steps {
                while next_eval <= self.steps {
                    next_eval += interval;
                }
                let eval = self.evaluate()?;
                let r = self.row(&eval);
                log::info!(
                    "{} seed {} step {}: eval {:.2} +/- {:.2}",
                    r.mode,
                    r.seed,
                    r.step,
                    r.eval_score_mean,
                    r.eval_score_std
                );
                on_row(&r);
                rows.push(r);
            }
        }
        Ok(rows)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut meta = BTreeMap::new();
        meta.insert("mode".into(), self.cfg.mode.name().into());
        meta.insert("seed".into(), self.cfg.seed.to_string());
        meta.insert("steps".into(), self.steps.to_string());
        meta.insert("updates".into(), self.updates.to_string());
        Checkpoint::from_store(&self.store, meta)
    }

    /// Restores parameters, optimiser moments and counters. Actors start
    /// fresh episodes.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let get = |k: &str| -> Result<u64> {
            ckpt.meta
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint metadata lacks `{k}`")))
        };
        if ckpt.meta.get("mode").map(String::as_str) != Some(self.cfg.mode.name()) {
            return Err(Error::Checkpoint(format!(
                "checkpoint was written by mode {:?}, trainer runs `{}`",
                ckpt.meta.get("mode"),
                self.cfg.mode
            )));
        }
        let steps = get("steps")?;
        let updates = get("updates")?;
        ckpt.restore_into(&mut self.store)?;
        self.steps = steps;
        self.updates = updates;
        Ok(())
    }
}
