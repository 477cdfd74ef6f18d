//! Factored multi-action Bernoulli policy and the single-action categorical
//! baseline.
//!
//! In multi-action mode the network emits one marginal `phi_i` per primitive
//! action and a joint mask `a` has probability
//! `prod_i a_i phi_i + (1 - a_i)(1 - phi_i)`, so its log-probability is the
//! negated binary cross-entropy `-H(a, phi)`. In single-action mode the head
//! is a softmax over the `N` primitives plus an explicit no-op.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Dense, Matrix, ParamId, ParameterStore, Tape, Var};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    /// Any subset of the primitive actions per step.
    Maps,
    /// Exactly one primitive action per step, or the no-op.
    Saps,
}

impl ActionMode {
    /// Width of the policy head for `n` primitive actions.
    pub fn head_width(self, n: usize) -> usize {
        match self {
            ActionMode::Maps => n,
            ActionMode::Saps => n + 1,
        }
    }
}

/// Binary vector over the primitive actions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionMask(Vec<bool>);

impl ActionMask {
    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        Self(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn from_bools(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    /// Single-action mask for categorical outcome `index`; `index == n` is the no-op.
    pub fn one_hot(n: usize, index: usize) -> Self {
        let mut m = Self::zeros(n);
        if index < n {
            m.0[index] = true;
        }
        m
    }

    /// Bit `i` is set iff `(code >> i) & 1 == 1`.
    pub fn from_code(n: usize, code: u64) -> Self {
        Self((0..n).map(|i| (code >> i) & 1 == 1).collect())
    }

    pub fn code(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &b)| acc | ((b as u64) << i))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, v: bool) {
        self.0[i] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Valid in multi-action mode: always.
    /// Valid in single-action mode: at most one bit set (none is the no-op).
    pub fn is_valid(&self, mode: ActionMode) -> bool {
        match mode {
            ActionMode::Maps => true,
            ActionMode::Saps => self.count_ones() <= 1,
        }
    }

    /// Categorical index of a single-action mask (`len()` for the no-op).
    pub fn saps_index(&self) -> Option<usize> {
        match self.count_ones() {
            0 => Some(self.len()),
            1 => self.0.iter().position(|&b| b),
            _ => None,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

impl fmt::Display for ActionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for ActionMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Config(format!("invalid mask character `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

/// Policy marginals (or single-action simplex) plus the state-value estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mode: ActionMode,
    /// Multi-action: `N` Bernoulli marginals. Single-action: `N + 1` simplex.
    pub probs: Vec<f64>,
    pub value: f64,
}

impl PolicyOutput {
    pub fn n_actions(&self) -> usize {
        match self.mode {
            ActionMode::Maps => self.probs.len(),
            ActionMode::Saps => self.probs.len() - 1,
        }
    }
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `log p(a_i)` for one Bernoulli component with success probability `phi`.
pub fn bernoulli_log_prob(a: bool, phi: f64) -> f64 {
    let p = clamp_prob(phi);
    if a {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// Binary cross-entropy `H(a, phi) = -sum_i a_i ln phi_i + (1 - a_i) ln(1 - phi_i)`.
pub fn cross_entropy(mask: &ActionMask, phi: &[f64]) -> f64 {
    debug_assert_eq!(mask.len(), phi.len());
    -mask
        .bits()
        .iter()
        .zip(phi)
        .map(|(&a, &p)| {
            let p = clamp_prob(p);
            let a = if a { 1.0 } else { 0.0 };
            a * p.ln() + (1.0 - a) * (1.0 - p).ln()
        })
        .sum::<f64>()
}

/// Joint log-probability of `mask` under `out`.
pub fn mask_log_prob(mask: &ActionMask, out: &PolicyOutput) -> f64 {
    match out.mode {
        ActionMode::Maps => mask
            .bits()
            .iter()
            .zip(&out.probs)
            .map(|(&a, &p)| bernoulli_log_prob(a, p))
            .sum(),
        ActionMode::Saps => match mask.saps_index() {
            Some(k) => clamp_prob(out.probs[k]).ln(),
            None => f64::NEG_INFINITY,
        },
    }
}

/// Policy entropy. Multi-action: sum of the per-action binary entropies.
pub fn mask_entropy(out: &PolicyOutput) -> f64 {
    match out.mode {
        ActionMode::Maps => out
            .probs
            .iter()
            .map(|&p| {
                let p = clamp_prob(p);
                -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
            })
            .sum(),
        ActionMode::Saps => out
            .probs
            .iter()
            .map(|&p| {
                let p = clamp_prob(p);
                -p * p.ln()
            })
            .sum(),
    }
}

pub fn sample_mask<R: Rng + ?Sized>(out: &PolicyOutput, rng: &mut R) -> ActionMask {
    match out.mode {
        ActionMode::Maps => {
            ActionMask::from_bools(out.probs.iter().map(|&p| rng.random::<f64>() < p).collect())
        }
        ActionMode::Saps => {
            let n = out.n_actions();
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = n;
            for (k, &p) in out.probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            ActionMask::one_hot(n, pick)
        }
    }
}

/// Deterministic action: threshold marginals at `threshold` (ties go to 1), or
/// the single-action argmax (ties go to the lowest index).
pub fn greedy_mask(out: &PolicyOutput, threshold: f64) -> ActionMask {
    match out.mode {
        ActionMode::Maps => {
            ActionMask::from_bools(out.probs.iter().map(|&p| p >= threshold).collect())
        }
        ActionMode::Saps => {
            let mut best = 0;
            for (k, &p) in out.probs.iter().enumerate() {
                if p > out.probs[best] {
                    best = k;
                }
            }
            ActionMask::one_hot(out.n_actions(), best)
        }
    }
}

/// Architecture of the shared-trunk actor-critic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub obs_dim: usize,
    pub feat_dim: usize,
    pub hidden: usize,
    pub n_actions: usize,
    pub mode: ActionMode,
}

/// Inverted-dropout keep masks for the two hidden layers (entries are `0` or `1 / (1 - rate)`).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub h1: Matrix,
    pub h2: Matrix,
}

impl DropoutMasks {
    pub fn sample<R: Rng + ?Sized>(rows: usize, hidden: usize, rate: f64, rng: &mut R) -> Self {
        let keep = 1.0 - rate;
        let mut draw = || {
            let data = (0..rows * hidden)
                .map(|_| {
                    if rate > 0.0 && rng.random::<f64>() < rate {
                        0.0
                    } else {
                        1.0 / keep
                    }
                })
                .collect();
            Matrix::from_vec(rows, hidden, data)
        };
        let h1 = draw();
        let h2 = draw();
        Self { h1, h2 }
    }
}

/// Tape handles for one batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    /// Multi-action: sigmoid marginals `n x N`. Single-action: log-softmax `n x (N + 1)`.
    pub policy: Var,
    /// `n x 1`.
    pub value: Var,
}

/// `obs -> tanh(dense) -> [. | features] -> tanh(dense) -> {policy head, value head}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub shape: NetShape,
    pub trunk1: Dense,
    pub trunk2: Dense,
    pub policy_head: Dense,
    pub value_head: Dense,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        shape: NetShape,
        rng: &mut R,
    ) -> Result<Self> {
        if shape.obs_dim == 0 || shape.hidden == 0 || shape.n_actions == 0 {
            return Err(Error::Config(format!("degenerate network shape {shape:?}")));
        }
        let trunk1 = Dense::new(store, "trunk1", shape.obs_dim, shape.hidden, rng)?;
        let trunk2 = Dense::new(
            store,
            "trunk2",
            shape.hidden + shape.feat_dim,
            shape.hidden,
            rng,
        )?;
        let policy_head = Dense::new(
            store,
            "policy",
            shape.hidden,
            shape.mode.head_width(shape.n_actions),
            rng,
        )?;
        let value_head = Dense::new(store, "value", shape.hidden, 1, rng)?;
        Ok(Self {
            shape,
            trunk1,
            trunk2,
            policy_head,
            value_head,
        })
    }

    pub fn value_params(&self) -> [ParamId; 2] {
        [self.value_head.weight, self.value_head.bias]
    }

    pub fn policy_head_params(&self) -> [ParamId; 2] {
        [self.policy_head.weight, self.policy_head.bias]
    }

    fn check_inputs(&self, obs: &Matrix, feats: &Matrix) -> Result<()> {
        if obs.cols() != self.shape.obs_dim
            || feats.cols() != self.shape.feat_dim
            || obs.rows() != feats.rows()
        {
            return Err(Error::Config(format!(
                "network expects observations of width {} and features of width {}, got {}x{} and {}x{}",
                self.shape.obs_dim,
                self.shape.feat_dim,
                obs.rows(),
                obs.cols(),
                feats.rows(),
                feats.cols()
            )));
        }
        Ok(())
    }

    /// Batched forward pass. Dropout is applied only when `dropout` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        obs: Matrix,
        feats: Matrix,
        dropout: Option<&DropoutMasks>,
    ) -> Result<HeadVars> {
        self.check_inputs(&obs, &feats)?;
        let x = tape.constant(obs);
        let f = tape.constant(feats);
        let h1 = self.trunk1.forward(tape, x)?;
        let mut h1 = tape.tanh(h1);
        if let Some(d) = dropout {
            let m = tape.constant(d.h1.clone());
            h1 = tape.mul(h1, m)?;
        }
        let joined = tape.concat_cols(h1, f)?;
        let h2 = self.trunk2.forward(tape, joined)?;
        let mut h2 = tape.tanh(h2);
        if let Some(d) = dropout {
            let m = tape.constant(d.h2.clone());
            h2 = tape.mul(h2, m)?;
        }
        let logits = self.policy_head.forward(tape, h2)?;
        let policy = match self.shape.mode {
            ActionMode::Maps => tape.sigmoid(logits),
            ActionMode::Saps => tape.log_softmax(logits),
        };
        let value = self.value_head.forward(tape, h2)?;
        Ok(HeadVars { policy, value })
    }

    /// Dropout-free inference for a batch of inputs.
    pub fn infer(
        &self,
        store: &ParameterStore,
        obs: Matrix,
        feats: Matrix,
    ) -> Result<Vec<PolicyOutput>> {
        let mut tape = Tape::new(store);
        let heads = self.forward(&mut tape, obs, feats, None)?;
        Ok(self.outputs(&tape, heads))
    }

    /// Reads per-row [`PolicyOutput`]s off a forward pass.
    pub fn outputs(&self, tape: &Tape, heads: HeadVars) -> Vec<PolicyOutput> {
        let p = tape.value(heads.policy);
        let v = tape.value(heads.value);
        (0..p.rows())
            .map(|r| PolicyOutput {
                mode: self.shape.mode,
                probs: match self.shape.mode {
                    ActionMode::Maps => p.row(r).to_vec(),
                    ActionMode::Saps => p.row(r).iter().map(|l| l.exp()).collect(),
                },
                value: v.get(r, 0),
            })
            .collect()
    }
}

/// Single-sample forward pass; `dropout` carries the rate and RNG for the
/// expert stream when enabled.
pub fn policy_forward<R: Rng + ?Sized>(
    net: &PolicyNet,
    store: &ParameterStore,
    obs: &[f64],
    features: &[f64],
    dropout: Option<(f64, &mut R)>,
) -> Result<PolicyOutput> {
    let mut tape = Tape::new(store);
    let masks = dropout.map(|(rate, rng)| DropoutMasks::sample(1, net.shape.hidden, rate, rng));
    let heads = net.forward(
        &mut tape,
        Matrix::row_vector(obs.to_vec()),
        Matrix::row_vector(features.to_vec()),
        masks.as_ref(),
    )?;
    Ok(net.outputs(&tape, heads).remove(0))
}

/// Per-row log-probability of `masks` (`n x N`, entries 0/1) on the tape: `n x 1`.
pub fn taped_log_prob(
    tape: &mut Tape,
    mode: ActionMode,
    policy: Var,
    masks: &Matrix,
) -> Result<Var> {
    match mode {
        ActionMode::Maps => {
            let p = tape.clamp(policy, PROB_EPS, 1.0 - PROB_EPS);
            let log_p = tape.ln(p);
            let q = tape.one_minus(p);
            let log_q = tape.ln(q);
            let a = tape.constant(masks.clone());
            let not_a = tape.constant(masks.map(|x| 1.0 - x));
            let t1 = tape.mul(a, log_p)?;
            let t2 = tape.mul(not_a, log_q)?;
            let s = tape.add(t1, t2)?;
            Ok(tape.sum_cols(s))
        }
        ActionMode::Saps => {
            let (n, width) = tape.value(policy).shape();
            let mut onehot = Matrix::zeros(n, width);
            for r in 0..n {
                let row = masks.row(r);
                let k = row.iter().position(|&x| x != 0.0).unwrap_or(width - 1);
                onehot.set(r, k, 1.0);
            }
            let c = tape.constant(onehot);
            let picked = tape.mul(policy, c)?;
            Ok(tape.sum_cols(picked))
        }
    }
}

/// Per-row policy entropy on the tape: `n x 1`.
pub fn taped_entropy(tape: &mut Tape, mode: ActionMode, policy: Var) -> Result<Var> {
    match mode {
        ActionMode::Maps => {
            let p = tape.clamp(policy, PROB_EPS, 1.0 - PROB_EPS);
            let log_p = tape.ln(p);
            let q = tape.one_minus(p);
            let log_q = tape.ln(q);
            let t1 = tape.mul(p, log_p)?;
            let t2 = tape.mul(q, log_q)?;
            let s = tape.add(t1, t2)?;
            let s = tape.sum_cols(s);
            Ok(tape.scale(s, -1.0))
        }
        ActionMode::Saps => {
            let p = tape.exp(policy);
            let t = tape.mul(p, policy)?;
            let s = tape.sum_cols(t);
            Ok(tape.scale(s, -1.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn maps(probs: Vec<f64>) -> PolicyOutput {
        PolicyOutput {
            mode: ActionMode::Maps,
            probs,
            value: 0.0,
        }
    }

    fn zero_net(mode: ActionMode) -> (ParameterStore, PolicyNet) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParameterStore::new();
        let shape = NetShape {
            obs_dim: 6,
            feat_dim: 2,
            hidden: 4,
            n_actions: 7,
            mode,
        };
        let net = PolicyNet::new(&mut store, shape, &mut rng).unwrap();
        for p in store.params_mut() {
            p.value.fill(0.0);
        }
        (store, net)
    }

    #[test]
    fn zero_weight_network_outputs() {
        let (store, net) = zero_net(ActionMode::Maps);
        let out = policy_forward::<ChaCha8Rng>(&net, &store, &[1.0; 6], &[0.5, 0.5], None).unwrap();
        assert!(out.probs.iter().all(|&p| p == 0.5));
        assert_eq!(out.value, 0.0);

        let (store, net) = zero_net(ActionMode::Saps);
        let out = policy_forward::<ChaCha8Rng>(&net, &store, &[1.0; 6], &[0.5, 0.5], None).unwrap();
        assert_eq!(out.probs.len(), 8);
        assert!(out.probs.iter().all(|&p| (p - 0.125).abs() < 1e-15));
        assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inference_is_deterministic_and_shape_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParameterStore::new();
        let shape = NetShape {
            obs_dim: 10,
            feat_dim: 2,
            hidden: 8,
            n_actions: 3,
            mode: ActionMode::Maps,
        };
        let net = PolicyNet::new(&mut store, shape, &mut rng).unwrap();
        let obs: Vec<f64> = (0..10).map(|i| (i % 3) as f64).collect();
        let a = policy_forward::<ChaCha8Rng>(&net, &store, &obs, &[0.1, 0.9], None).unwrap();
        let b = policy_forward::<ChaCha8Rng>(&net, &store, &obs, &[0.1, 0.9], None).unwrap();
        assert_eq!(a, b);
        assert!(a.probs.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(policy_forward::<ChaCha8Rng>(&net, &store, &obs[..9], &[0.1, 0.9], None).is_err());
        assert!(policy_forward::<ChaCha8Rng>(&net, &store, &obs, &[0.1], None).is_err());

        let d = policy_forward(&net, &store, &obs, &[0.1, 0.9], Some((0.5, &mut rng))).unwrap();
        assert_ne!(d, a);
    }

    #[test]
    fn log_prob_examples() {
        let out = maps(vec![0.5, 0.5, 0.5]);
        let lp = mask_log_prob(&ActionMask::from_bits(&[1, 0, 1]), &out);
        assert!((lp - 3.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((lp + 2.0794).abs() < 1e-4);

        let out = maps(vec![1.0, 0.0, 1.0]);
        let lp = mask_log_prob(&ActionMask::from_bits(&[1, 0, 1]), &out);
        assert!(lp < 0.0 && lp > -1e-5);
    }

    #[test]
    fn log_prob_exhaustive_sum_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let out = maps((0..3).map(|_| rng.random_range(0.0..1.0)).collect());
        let total: f64 = (0..8u64)
            .map(|c| mask_log_prob(&ActionMask::from_code(3, c), &out).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        assert!((mask_entropy(&maps(vec![0.5, 0.5])) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(mask_entropy(&maps(vec![1.0, 0.0])) < 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let probs: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..0.99)).collect();
        let direct: f64 = probs
            .iter()
            .map(|&p: &f64| -p * p.ln() - (1.0 - p) * (1.0 - p).ln())
            .sum();
        assert!((mask_entropy(&maps(probs)) - direct).abs() < 1e-12);
    }

    #[test]
    fn degenerate_bernoullis_sample_deterministically() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = maps(vec![1.0, 1.0, 0.0]);
        for _ in 0..100 {
            assert_eq!(
                sample_mask(&out, &mut rng),
                ActionMask::from_bits(&[1, 1, 0])
            );
        }
    }

    #[test]
    fn saps_uniform_sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let out = PolicyOutput {
            mode: ActionMode::Saps,
            probs: vec![0.125; 8],
            value: 0.0,
        };
        let mut counts = [0usize; 8];
        let draws = 100_000;
        for _ in 0..draws {
            let m = sample_mask(&out, &mut rng);
            assert!(m.is_valid(ActionMode::Saps));
            counts[m.saps_index().unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.125).abs() < 0.01);
        }
    }

    #[test]
    fn greedy_tie_goes_to_one() {
        let m = greedy_mask(&maps(vec![0.5, 0.49, 0.51]), 0.5);
        assert_eq!(m, ActionMask::from_bits(&[1, 0, 1]));
    }

    #[test]
    fn mask_text_roundtrip_and_saps_containment() {
        let m: ActionMask = "1010001".parse().unwrap();
        assert_eq!(m.to_string(), "1010001");
        assert_eq!(ActionMask::from_code(7, m.code()), m);
        assert!("10x".parse::<ActionMask>().is_err());
        for k in 0..=7 {
            let one_hot = ActionMask::one_hot(7, k);
            assert!(one_hot.is_valid(ActionMode::Saps));
            assert!(one_hot.is_valid(ActionMode::Maps));
            assert_eq!(one_hot.saps_index(), Some(k));
        }
        assert_eq!(ActionMask::from_bits(&[1, 1, 0]).saps_index(), None);
    }

    #[test]
    fn taped_log_prob_matches_scalar_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = ParameterStore::new();
        let shape = NetShape {
            obs_dim: 5,
            feat_dim: 2,
            hidden: 6,
            n_actions: 4,
            mode: ActionMode::Maps,
        };
        let net = PolicyNet::new(&mut store, shape, &mut rng).unwrap();
        let obs = Matrix::from_vec(3, 5, (0..15).map(|_| rng.random_range(-1.0..1.0)).collect());
        let feats = Matrix::from_vec(3, 2, (0..6).map(|_| rng.random_range(0.0..1.0)).collect());
        let masks = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.0, 1.0, 1.0, 1.0],
        ]);
        let mut tape = Tape::new(&store);
        let heads = net.forward(&mut tape, obs, feats, None).unwrap();
        let lp = taped_log_prob(&mut tape, ActionMode::Maps, heads.policy, &masks).unwrap();
        let ent = taped_entropy(&mut tape, ActionMode::Maps, heads.policy).unwrap();
        let outs = net.outputs(&tape, heads);
        for (r, out) in outs.iter().enumerate() {
            let mask = ActionMask::from_bools(masks.row(r).iter().map(|&x| x != 0.0).collect());
            assert!((tape.value(lp).get(r, 0) - mask_log_prob(&mask, out)).abs() < 1e-12);
            assert!((tape.value(ent).get(r, 0) - mask_entropy(out)).abs() < 1e-12);
        }
    }
}
