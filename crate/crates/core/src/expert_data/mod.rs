//! Demonstration datasets: recording, persistence, held-out splits and noisy
//! batch sampling for the expert loss.
//!
//! Samples store the single egocentric frame seen before the action; stacked
//! observations are rebuilt from episode order, repeating the first frame of
//! each episode exactly as [`FrameStack`](crate::arena::FrameStack) does live.

mod format;

pub use format::{DatasetError, FORMAT_MAGIC, FORMAT_VERSION};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arena::{scripted_expert, Arena, ExpertConfig, ObservationFrame, N_ACTIONS};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParameterStore};
use crate::policy::{greedy_mask, ActionMask, PolicyNet};

/// One recorded step.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertSample {
    pub frame: ObservationFrame,
    pub features: Vec<f64>,
    pub mask: ActionMask,
    /// Kept for completeness; never used by the value loss.
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Scripted,
    Human,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Scripted => "scripted",
            Source::Human => "human",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub source: Source,
    /// Seed for scripted data, free-form session id for human data. No spaces.
    pub session: String,
    pub view: usize,
    pub channels: usize,
    pub n_actions: usize,
    pub n_features: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub samples: Vec<ExpertSample>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub meta: DatasetMeta,
    pub episodes: Vec<Episode>,
    /// Sorted indices of held-out episodes.
    pub heldout: Vec<usize>,
}

/// Standard deviations of the additive Gaussian input noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub obs_std: f64,
    pub feat_std: f64,
}

impl NoiseConfig {
    pub const NONE: NoiseConfig = NoiseConfig {
        obs_std: 0.0,
        feat_std: 0.0,
    };
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            obs_std: 0.1,
            feat_std: 0.3,
        }
    }
}

/// Stacked inputs and labels for a batch of demonstrations.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertBatch {
    pub obs: Matrix,
    pub feats: Matrix,
    /// `n x N` of 0/1.
    pub masks: Matrix,
    /// Global sample index of each row.
    pub indices: Vec<usize>,
}

/// Global sample position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    pub episode: usize,
    pub step: usize,
}

impl DemoDataset {
    pub fn new(meta: DatasetMeta) -> Self {
        Self {
            meta,
            episodes: Vec::new(),
            heldout: Vec::new(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.episodes.iter().map(|e| e.samples.len()).sum()
    }

    pub fn frame_len(&self) -> usize {
        self.meta.channels * self.meta.view * self.meta.view
    }

    pub fn scores(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.score).collect()
    }

    /// Mean and population standard deviation of episode scores.
    pub fn score_stats(&self) -> (f64, f64) {
        let s = self.scores();
        if s.is_empty() {
            return (0.0, 0.0);
        }
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Marks `round(frac * episodes)` whole episodes as held out, at least
    /// one when there are two or more episodes and `frac > 0`.
    pub fn split_heldout(&mut self, frac: f64, seed: u64) {
        let n = self.episodes.len();
        let mut k = (frac * n as f64).round() as usize;
        if frac > 0.0 && n >= 2 {
            k = k.clamp(1, n - 1);
        } else {
            k = k.min(n);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut held = sample_indices(&mut rng, n, k).into_vec();
        held.sort_unstable();
        self.heldout = held;
    }

    fn refs(&self, heldout: bool) -> Vec<usize> {
        let mut out = Vec::new();
        let mut base = 0;
        for (e, ep) in self.episodes.iter().enumerate() {
            if self.heldout.binary_search(&e).is_ok() == heldout {
                out.extend(base..base + ep.samples.len());
            }
            base += ep.samples.len();
        }
        out
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.refs(false)
    }

    pub fn heldout_indices(&self) -> Vec<usize> {
        self.refs(true)
    }

    pub fn locate(&self, mut index: usize) -> Option<SampleRef> {
        for (e, ep) in self.episodes.iter().enumerate() {
            if index < ep.samples.len() {
                return Some(SampleRef {
                    episode: e,
                    step: index,
                });
            }
            index -= ep.samples.len();
        }
        None
    }

    pub fn sample(&self, r: SampleRef) -> &ExpertSample {
        &self.episodes[r.episode].samples[r.step]
    }

    /// Appends the stacked observation of `r` (oldest frame first) to `out`.
    pub fn write_stacked(&self, r: SampleRef, depth: usize, out: &mut Vec<f64>) {
        let samples = &self.episodes[r.episode].samples;
        for k in (0..depth).rev() {
            let t = r.step.saturating_sub(k);
            out.extend(samples[t].frame.cells.iter().map(|&c| c as f64));
        }
    }

    pub fn stacked_observation(&self, r: SampleRef, depth: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(depth * self.frame_len());
        self.write_stacked(r, depth, &mut out);
        out
    }

    /// Gathers the given global sample indices into batch matrices.
    pub fn gather(&self, indices: &[usize], depth: usize) -> ExpertBatch {
        let n = indices.len();
        let mut obs = Vec::with_capacity(n * depth * self.frame_len());
        let mut feats = Vec::with_capacity(n * self.meta.n_features);
        let mut masks = Vec::with_capacity(n * self.meta.n_actions);
        let refs = self.ref_table();
        for &i in indices {
            let r = refs[i];
            self.write_stacked(r, depth, &mut obs);
            let s = self.sample(r);
            feats.extend_from_slice(&s.features);
            masks.extend(s.mask.to_f64());
        }
        ExpertBatch {
            obs: Matrix::from_vec(n, depth * self.frame_len(), obs),
            feats: Matrix::from_vec(n, self.meta.n_features, feats),
            masks: Matrix::from_vec(n, self.meta.n_actions, masks),
            indices: indices.to_vec(),
        }
    }

    fn ref_table(&self) -> Vec<SampleRef> {
        self.episodes
            .iter()
            .enumerate()
            .flat_map(|(e, ep)| {
                (0..ep.samples.len()).map(move |t| SampleRef {
                    episode: e,
                    step: t,
                })
            })
            .collect()
    }

    /// Episode boundaries coincide with terminal flags.
    pub fn check_terminals(&self) -> Result<()> {
        for (e, ep) in self.episodes.iter().enumerate() {
            let n = ep.samples.len();
            for (t, s) in ep.samples.iter().enumerate() {
                if s.terminal != (t + 1 == n) {
                    return Err(Error::Config(format!(
                        "episode {e}: terminal flag at step {t} does not match the episode end"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Uniform-with-replacement sampler over the training split.
#[derive(Debug, Clone)]
pub struct ExpertSampler {
    train: Vec<usize>,
    refs: Vec<SampleRef>,
    depth: usize,
}

impl ExpertSampler {
    pub fn new(ds: &DemoDataset, depth: usize) -> Result<Self> {
        let train = ds.train_indices();
        if train.is_empty() {
            return Err(DatasetError::Empty("training split has no samples".into()).into());
        }
        Ok(Self {
            train,
            refs: ds.ref_table(),
            depth,
        })
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    /// Draws `size` samples and adds fresh Gaussian noise to the inputs.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        ds: &DemoDataset,
        size: usize,
        rng: &mut R,
        noise: NoiseConfig,
    ) -> Result<ExpertBatch> {
        if size > self.train.len() {
            return Err(Error::Config(format!(
                "expert batch of {size} exceeds the {} training samples",
                self.train.len()
            )));
        }
        let indices: Vec<usize> = (0..size)
            .map(|_| self.train[rng.random_range(0..self.train.len())])
            .collect();
        let frame = ds.frame_len();
        let mut obs = Vec::with_capacity(size * self.depth * frame);
        let mut feats = Vec::with_capacity(size * ds.meta.n_features);
        let mut masks = Vec::with_capacity(size * ds.meta.n_actions);
        for &i in &indices {
            let r = self.refs[i];
            ds.write_stacked(r, self.depth, &mut obs);
            let s = ds.sample(r);
            feats.extend_from_slice(&s.features);
            masks.extend(s.mask.to_f64());
        }
        add_noise(&mut obs, noise.obs_std, rng)?;
        add_noise(&mut feats, noise.feat_std, rng)?;
        Ok(ExpertBatch {
            obs: Matrix::from_vec(size, self.depth * frame, obs),
            feats: Matrix::from_vec(size, ds.meta.n_features, feats),
            masks: Matrix::from_vec(size, ds.meta.n_actions, masks),
            indices,
        })
    }
}

fn add_noise<R: Rng + ?Sized>(values: &mut [f64], std: f64, rng: &mut R) -> Result<()> {
    if std == 0.0 {
        return Ok(());
    }
    let normal =
        Normal::new(0.0, std).map_err(|e| Error::Config(format!("noise std {std}: {e}")))?;
    for v in values {
        *v += normal.sample(rng);
    }
    Ok(())
}

/// One-shot wrapper around [`ExpertSampler`].
pub fn sample_expert_batch<R: Rng + ?Sized>(
    ds: &DemoDataset,
    depth: usize,
    size: usize,
    rng: &mut R,
    noise: NoiseConfig,
) -> Result<ExpertBatch> {
    ExpertSampler::new(ds, depth)?.sample(ds, size, rng, noise)
}

/// Plays the scripted expert for `episodes` episodes, storing every step.
pub fn record_scripted(
    arena: &Arena,
    expert: &ExpertConfig,
    episodes: usize,
    seed: u64,
    heldout_frac: f64,
) -> Result<DemoDataset> {
    if episodes == 0 {
        return Err(Error::Config(
            "record_scripted needs at least one episode".into(),
        ));
    }
    let cfg = arena.config();
    let mut ds = DemoDataset::new(DatasetMeta {
        source: Source::Scripted,
        session: format!("seed-{seed}"),
        view: cfg.view_size,
        channels: crate::arena::CHANNELS,
        n_actions: crate::arena::N_ACTIONS,
        n_features: 2,
    });
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut expert_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0e0e);
    for _ in 0..episodes {
        let (mut state, mut frame) = arena.reset(seeds.random());
        let mut samples = Vec::new();
        loop {
            let mask = scripted_expert(arena, &state, expert, &mut expert_rng);
            let executed =
                if expert.exec_noise > 0.0 && expert_rng.random::<f64>() < expert.exec_noise {
                    ActionMask::from_code(N_ACTIONS, expert_rng.random_range(0..1u64 << N_ACTIONS))
                } else {
                    mask.clone()
                };
            let out = arena.step(&mut state, &executed)?;
            samples.push(ExpertSample {
                features: frame.features.to_vec(),
                frame,
                mask,
                reward: out.reward,
                terminal: out.done,
            });
            frame = out.frame;
            if out.done {
                break;
            }
        }
        ds.episodes.push(Episode {
            samples,
            score: state.score,
        });
    }
    ds.split_heldout(heldout_frac, seed.wrapping_add(1));
    Ok(ds)
}

/// Anything that maps a batch of stacked observations and features to
/// per-action marginals.
pub trait MarginalPolicy {
    fn marginals(&self, obs: Matrix, feats: Matrix) -> Result<Vec<Vec<f64>>>;
}

/// A trained network bound to its parameters.
pub struct NetPolicy<'a> {
    pub net: &'a PolicyNet,
    pub store: &'a ParameterStore,
}

impl MarginalPolicy for NetPolicy<'_> {
    fn marginals(&self, obs: Matrix, feats: Matrix) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .net
            .infer(self.store, obs, feats)?
            .into_iter()
            .map(|o| match o.mode {
                crate::policy::ActionMode::Maps => o.probs,
                // one-hot of the argmax so thresholding reproduces it
                crate::policy::ActionMode::Saps => greedy_mask(&o, 0.5).to_f64(),
            })
            .collect())
    }
}

/// Fraction of held-out samples whose thresholded marginals reproduce the
/// expert mask on every component (ties at the threshold go to 1).
pub fn heldout_action_accuracy(
    ds: &DemoDataset,
    policy: &dyn MarginalPolicy,
    depth: usize,
    threshold: f64,
) -> Result<f64> {
    let held = ds.heldout_indices();
    if held.is_empty() {
        return Err(DatasetError::Empty("held-out split has no samples".into()).into());
    }
    let mut correct = 0usize;
    for chunk in held.chunks(256) {
        let batch = ds.gather(chunk, depth);
        let phis = policy.marginals(batch.obs, batch.feats)?;
        for (row, phi) in phis.iter().enumerate() {
            let want = batch.masks.row(row);
            if phi
                .iter()
                .zip(want)
                .all(|(&p, &a)| (p >= threshold) == (a != 0.0))
            {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / held.len() as f64)
}
