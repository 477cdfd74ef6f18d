use rand::Rng;

use super::config::{LossWeights, TrainConfig};
use crate::error::{Error, Result};
use crate::expert_data::ExpertBatch;
use crate::numerics::{
    adam_step, clip_global_norm, AdamConfig, Gradients, Matrix, ParameterStore, Tape, Var,
};
use crate::policy::{taped_entropy, taped_log_prob, ActionMode, DropoutMasks, PolicyNet};

/// Discounted returns by backward recursion `R_t = r_t + gamma (1 - done_t) R_{t+1}`,
/// seeded with `bootstrap` after the last step.
pub fn n_step_returns(rewards: &[f64], terminals: &[bool], bootstrap: f64, gamma: f64) -> Vec<f64> {
    debug_assert_eq!(rewards.len(), terminals.len());
    let mut out = vec![0.0; rewards.len()];
    let mut next = bootstrap;
    for t in (0..rewards.len()).rev() {
        if terminals[t] {
            next = 0.0;
        }
        next = rewards[t] + gamma * next;
        out[t] = next;
    }
    out
}

pub fn advantages(returns: &[f64], values: &[f64]) -> Vec<f64> {
    debug_assert_eq!(returns.len(), values.len());
    returns.iter().zip(values).map(|(r, v)| r - v).collect()
}

/// Live transitions of one collection round, rows ordered actor-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveBatch {
    pub obs: Matrix,
    pub feats: Matrix,
    pub masks: Matrix,
    pub returns: Vec<f64>,
    /// Detached: they enter the loss as constants.
    pub advantages: Vec<f64>,
    /// Number of rollouts the rows came from.
    pub rollouts: usize,
}

impl LiveBatch {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

/// `mean((V - R)^2)`.
pub fn value_loss(tape: &mut Tape, value: Var, returns: &[f64]) -> Result<Var> {
    let r = tape.constant(Matrix::column_vector(returns.to_vec()));
    let d = tape.sub(value, r)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean_all(sq))
}

/// `(1 / M) sum_i sum_t H(a_t, phi(s_t)) A_t`, with `-log pi` in place of `H`
/// for the single-action head.
pub fn policy_loss_live(
    tape: &mut Tape,
    mode: ActionMode,
    policy: Var,
    masks: &Matrix,
    advantages: &[f64],
    rollouts: usize,
) -> Result<Var> {
    let lp = taped_log_prob(tape, mode, policy, masks)?;
    let a = tape.constant(Matrix::column_vector(advantages.to_vec()));
    let w = tape.mul(lp, a)?;
    let s = tape.sum_all(w);
    Ok(tape.scale(s, -1.0 / rollouts as f64))
}

/// Mean cross-entropy between expert masks and the policy marginals.
pub fn policy_loss_expert(
    tape: &mut Tape,
    mode: ActionMode,
    policy: Var,
    masks: &Matrix,
) -> Result<Var> {
    let lp = taped_log_prob(tape, mode, policy, masks)?;
    let m = tape.mean_all(lp);
    Ok(tape.scale(m, -1.0))
}

/// `(1 / M) sum_i sum_t entropy(s_t)`.
pub fn entropy_bonus(
    tape: &mut Tape,
    mode: ActionMode,
    policy: Var,
    rollouts: usize,
) -> Result<Var> {
    let e = taped_entropy(tape, mode, policy)?;
    let s = tape.sum_all(e);
    Ok(tape.scale(s, 1.0 / rollouts as f64))
}

/// Handles to the components of one combined loss; absent terms are `None`.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub policy_live: Option<Var>,
    pub policy_expert: Option<Var>,
    pub value: Option<Var>,
    pub entropy: Option<Var>,
}

/// Records `live + lambda s_E expert + c_v value - beta entropy` on
/// `tape`. Terms with zero weight or no data are left out of the graph.
pub fn build_loss(
    tape: &mut Tape,
    net: &PolicyNet,
    live: Option<&LiveBatch>,
    expert: Option<(&ExpertBatch, Option<&DropoutMasks>)>,
    w: LossWeights,
) -> Result<LossVars> {
    let mode = net.shape.mode;
    let mut terms: Vec<Var> = Vec::new();
    let (mut policy_live, mut policy_expert, mut value, mut entropy) = (None, None, None, None);
    let live =
        live.filter(|b| !b.is_empty() && (w.live != 0.0 || w.value != 0.0 || w.entropy != 0.0));
    if let Some(b) = live {
        let rollouts = b.rollouts.max(1);
        let heads = net.forward(tape, b.obs.clone(), b.feats.clone(), None)?;
        if w.live != 0.0 {
            let l = policy_loss_live(tape, mode, heads.policy, &b.masks, &b.advantages, rollouts)?;
            policy_live = Some(l);
            terms.push(tape.scale(l, w.live));
        }
        if w.value != 0.0 {
            let l = value_loss(tape, heads.value, &b.returns)?;
            value = Some(l);
            terms.push(tape.scale(l, w.value));
        }
        if w.entropy != 0.0 {
            let l = entropy_bonus(tape, mode, heads.policy, rollouts)?;
            entropy = Some(l);
            terms.push(tape.scale(l, -w.entropy));
        }
    }
    if let Some((b, dropout)) = expert.filter(|(b, _)| w.lambda != 0.0 && b.obs.rows() > 0) {
        let heads = net.forward(tape, b.obs.clone(), b.feats.clone(), dropout)?;
        let l = policy_loss_expert(tape, mode, heads.policy, &b.masks)?;
        policy_expert = Some(l);
        terms.push(tape.scale(l, w.lambda * w.expert_scale));
    }
    let total = match terms.split_first() {
        None => tape.constant(Matrix::zeros(1, 1)),
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = tape.add(acc, t)?;
            }
            acc
        }
    };
    Ok(LossVars {
        total,
        policy_live,
        policy_expert,
        value,
        entropy,
    })
}

/// Scalar readings of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateMetrics {
    pub total: f64,
    pub policy_live: f64,
    /// Per-sample mean expert cross-entropy (0 when absent).
    pub policy_expert: f64,
    pub value: f64,
    /// Per-rollout summed entropy (0 when absent).
    pub entropy: f64,
    pub lambda: f64,
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Gradients and loss readings without touching the parameters.
pub fn compute_gradients(
    net: &PolicyNet,
    store: &ParameterStore,
    live: Option<&LiveBatch>,
    expert: Option<(&ExpertBatch, Option<&DropoutMasks>)>,
    w: LossWeights,
) -> Result<(Gradients, UpdateMetrics)> {
    let mut tape = Tape::new(store);
    let vars = build_loss(&mut tape, net, live, expert, w)?;
    let read = |name: &'static str, v: Option<Var>| -> Result<f64> {
        let x = v.map_or(0.0, |v| tape.scalar(v));
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Error::NonFiniteLoss {
                component: name,
                value: x,
                context: String::new(),
            })
        }
    };
    let metrics = UpdateMetrics {
        total: read("total", Some(vars.total))?,
        policy_live: read("policy_live", vars.policy_live)?,
        policy_expert: read("policy_expert", vars.policy_expert)?,
        value: read("value", vars.value)?,
        entropy: read("entropy", vars.entropy)?,
        lambda: w.lambda,
        lr: 0.0,
        grad_norm: 0.0,
    };
    let grads = tape.backward(vars.total)?;
    Ok((grads, metrics))
}

/// One combined update: loss, backward, global-norm clip, Adam. Nothing is
/// modified when a loss or gradient is non-finite.
pub fn mail_update<R: Rng + ?Sized>(
    net: &PolicyNet,
    store: &mut ParameterStore,
    live: Option<&LiveBatch>,
    expert: Option<&ExpertBatch>,
    cfg: &TrainConfig,
    step: u64,
    rng: &mut R,
) -> Result<UpdateMetrics> {
    let w = cfg.weights(step);
    let ctx = || format!("step {step}");
    let dropout = match expert {
        Some(b) if w.lambda != 0.0 && cfg.expert_dropout > 0.0 => Some(DropoutMasks::sample(
            b.obs.rows(),
            net.shape.hidden,
            cfg.expert_dropout,
            rng,
        )),
        _ => None,
    };
    let (grads, mut metrics) =
        compute_gradients(net, store, live, expert.map(|b| (b, dropout.as_ref())), w)
            .map_err(|e| e.with_context(ctx()))?;
    store.zero_grad();
    store.accumulate(&grads);
    metrics.grad_norm = clip_global_norm(store, cfg.clip_norm);
    metrics.lr = cfg.lr(step);
    if let Err(e) = adam_step(store, metrics.lr, &AdamConfig::default()) {
        store.zero_grad();
        return Err(e.with_context(ctx()));
    }
    Ok(metrics)
}
