use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::update::{advantages, n_step_returns, LiveBatch};
use crate::arena::{Arena, FrameStack, WorldState};
use crate::error::Result;
use crate::numerics::{Matrix, ParameterStore};
use crate::policy::{greedy_mask, mask_log_prob, sample_mask, ActionMask, PolicyNet, PolicyOutput};

/// One actor's trajectory segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `T x obs_dim`, row-major.
    pub obs: Vec<f64>,
    pub feats: Vec<f64>,
    pub masks: Vec<ActionMask>,
    pub rewards: Vec<f64>,
    /// Episode ended after this step.
    pub terminals: Vec<bool>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Value of the state after the last step (unused if it was terminal).
    pub bootstrap: f64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn returns(&self, gamma: f64) -> Vec<f64> {
        n_step_returns(&self.rewards, &self.terminals, self.bootstrap, gamma)
    }
}

/// How actions are chosen from the policy output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionSelect {
    Sample,
    Greedy(f64),
}

/// A persistent environment instance; episodes continue across rollouts.
#[derive(Debug, Clone)]
pub struct Actor {
    pub state: WorldState,
    pub stack: FrameStack,
    seeds: ChaCha8Rng,
    pub episode_return: f64,
    pub finished: Vec<f64>,
}

impl Actor {
    pub fn new(arena: &Arena, seed: u64, depth: usize) -> Self {
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let (state, frame) = arena.reset(seeds.random());
        Self {
            state,
            stack: FrameStack::new(depth, &frame),
            seeds,
            episode_return: 0.0,
            finished: Vec::new(),
        }
    }

    fn restart(&mut self, arena: &Arena) {
        let (state, frame) = arena.reset(self.seeds.random());
        self.state = state;
        self.stack.reset(&frame);
        self.episode_return = 0.0;
    }
}

fn batch_inputs(actors: &[Actor]) -> (Matrix, Matrix) {
    let mut obs = Vec::new();
    let mut feats = Vec::new();
    for a in actors {
        a.stack.write_stacked(&mut obs);
        feats.extend_from_slice(&a.stack.features());
    }
    let n = actors.len();
    let width = obs.len() / n.max(1);
    (
        Matrix::from_vec(n, width, obs),
        Matrix::from_vec(n, 2, feats),
    )
}

/// Steps every actor `t` times with one batched forward pass per step.
pub fn collect_rollouts<R: Rng + ?Sized>(
    arena: &Arena,
    net: &PolicyNet,
    store: &ParameterStore,
    actors: &mut [Actor],
    t: usize,
    select: ActionSelect,
    rng: &mut R,
) -> Result<Vec<Rollout>> {
    let m = actors.len();
    let mut out: Vec<Rollout> = (0..m)
        .map(|_| Rollout {
            obs: Vec::new(),
            feats: Vec::new(),
            masks: Vec::with_capacity(t),
            rewards: Vec::with_capacity(t),
            terminals: Vec::with_capacity(t),
            values: Vec::with_capacity(t),
            log_probs: Vec::with_capacity(t),
            bootstrap: 0.0,
        })
        .collect();
    for _ in 0..t {
        let (obs, feats) = batch_inputs(actors);
        let outputs = net.infer(store, obs.clone(), feats.clone())?;
        for (i, (actor, pout)) in actors.iter_mut().zip(outputs).enumerate() {
            let mask = choose(&pout, select, rng);
            let r = &mut out[i];
            r.obs.extend_from_slice(obs.row(i));
            r.feats.extend_from_slice(feats.row(i));
            r.values.push(pout.value);
            r.log_probs.push(mask_log_prob(&mask, &pout));
            let (reward, done) = match arena.step(&mut actor.state, &mask) {
                Ok(o) => {
                    actor.stack.push(&o.frame);
                    (o.reward, o.done)
                }
                Err(e) => {
                    log::warn!("actor {i}: environment fault ({e}); restarting episode");
                    (0.0, true)
                }
            };
            actor.episode_return += reward;
            r.masks.push(mask);
            r.rewards.push(reward);
            r.terminals.push(done);
            if done {
                actor.finished.push(actor.episode_return);
                actor.restart(arena);
            }
        }
    }
    let (obs, feats) = batch_inputs(actors);
    for (r, o) in out.iter_mut().zip(net.infer(store, obs, feats)?) {
        r.bootstrap = o.value;
    }
    Ok(out)
}

fn choose<R: Rng + ?Sized>(out: &PolicyOutput, select: ActionSelect, rng: &mut R) -> ActionMask {
    match select {
        ActionSelect::Sample => sample_mask(out, rng),
        ActionSelect::Greedy(th) => greedy_mask(out, th),
    }
}

/// Stacks rollouts actor-major and attaches returns and detached advantages.
pub fn to_live_batch(rollouts: &[Rollout], gamma: f64) -> LiveBatch {
    let rows: usize = rollouts.iter().map(Rollout::len).sum();
    let obs_w = rollouts
        .iter()
        .find(|r| !r.is_empty())
        .map_or(0, |r| r.obs.len() / r.len());
    let feat_w = rollouts
        .iter()
        .find(|r| !r.is_empty())
        .map_or(0, |r| r.feats.len() / r.len());
    let n = rollouts
        .iter()
        .find_map(|r| r.masks.first())
        .map_or(0, ActionMask::len);
    let mut obs = Vec::with_capacity(rows * obs_w);
    let mut feats = Vec::with_capacity(rows * feat_w);
    let mut masks = Vec::with_capacity(rows * n);
    let mut returns = Vec::with_capacity(rows);
    let mut adv = Vec::with_capacity(rows);
    for r in rollouts {
        obs.extend_from_slice(&r.obs);
        feats.extend_from_slice(&r.feats);
        for m in &r.masks {
            masks.extend(m.to_f64());
        }
        let ret = r.returns(gamma);
        adv.extend(advantages(&ret, &r.values));
        returns.extend(ret);
    }
    LiveBatch {
        obs: Matrix::from_vec(rows, obs_w, obs),
        feats: Matrix::from_vec(rows, feat_w, feats),
        masks: Matrix::from_vec(rows, n, masks),
        returns,
        advantages: adv,
        rollouts: rollouts.len(),
    }
}

/// Scores from greedy evaluation episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Mean number of set bits per emitted mask.
    pub actions_per_step: f64,
}

/// Plays one deterministic episode per seed, all in lockstep.
pub fn evaluate_greedy(
    arena: &Arena,
    net: &PolicyNet,
    store: &ParameterStore,
    seeds: &[u64],
    depth: usize,
    threshold: f64,
) -> Result<EvalResult> {
    let mut states: Vec<(WorldState, FrameStack)> = seeds
        .iter()
        .map(|&s| {
            let (st, f) = arena.reset(s);
            (st, FrameStack::new(depth, &f))
        })
        .collect();
    let mut bits = 0usize;
    let mut steps = 0usize;
    loop {
        let live: Vec<usize> = (0..states.len()).filter(|&i| !states[i].0.done).collect();
        if live.is_empty() {
            break;
        }
        let mut obs = Vec::new();
        let mut feats = Vec::new();
        for &i in &live {
            states[i].1.write_stacked(&mut obs);
            feats.extend_from_slice(&states[i].1.features());
        }
        let n = live.len();
        let width = obs.len() / n;
        let outs = net.infer(
            store,
            Matrix::from_vec(n, width, obs),
            Matrix::from_vec(n, 2, feats),
        )?;
        for (&i, o) in live.iter().zip(outs) {
            let mask = greedy_mask(&o, threshold);
            bits += mask.count_ones();
            steps += 1;
            let (st, stack) = &mut states[i];
            let step = arena.step(st, &mask)?;
            stack.push(&step.frame);
        }
    }
    let scores: Vec<f64> = states.iter().map(|(s, _)| s.score).collect();
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = (scores.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(EvalResult {
        scores,
        mean,
        std,
        actions_per_step: bits as f64 / steps.max(1) as f64,
    })
}
