use std::collections::HashMap;

use mail_core::arena::{Arena, EnvConfig, ExpertConfig, ObservationFrame};
use mail_core::expert_data::*;
use mail_core::numerics::Matrix;
use mail_core::policy::ActionMask;
use mail_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DEPTH: usize = 4;

fn arena() -> Arena {
    Arena::new(EnvConfig::default()).unwrap()
}

fn small(episodes: usize, seed: u64) -> DemoDataset {
    record_scripted(&arena(), &ExpertConfig::default(), episodes, seed, 0.1).unwrap()
}

/// Hand-built dataset with a 3x3 view and random content.
fn toy(episode_lens: &[usize], heldout: Vec<usize>, seed: u64) -> DemoDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let meta = DatasetMeta {
        source: Source::Human,
        session: "toy".into(),
        view: 3,
        channels: 6,
        n_actions: 7,
        n_features: 2,
    };
    let mut ds = DemoDataset::new(meta);
    for &len in episode_lens {
        let samples = (0..len)
            .map(|t| {
                let features = vec![rng.random::<f64>(), rng.random::<f64>()];
                ExpertSample {
                    frame: ObservationFrame {
                        view: 3,
                        cells: (0..54).map(|_| rng.random_bool(0.3) as u8).collect(),
                        features: [features[0], features[1]],
                    },
                    features,
                    mask: ActionMask::from_code(7, rng.random_range(0..128)),
                    reward: rng.random_range(-1.0..1.0),
                    terminal: t + 1 == len,
                }
            })
            .collect();
        ds.episodes.push(Episode {
            samples,
            score: rng.random_range(0.0..50.0),
        });
    }
    ds.heldout = heldout;
    ds
}

#[test]
fn recording_has_one_terminal_per_episode() {
    let ds = small(30, 7);
    let terminals: usize = ds
        .episodes
        .iter()
        .flat_map(|e| &e.samples)
        .filter(|s| s.terminal)
        .count();
    assert_eq!(ds.episodes.len(), 30);
    assert_eq!(terminals, 30);
    ds.check_terminals().unwrap();
    assert_eq!(ds.heldout.len(), 3);
    assert!(ds
        .episodes
        .iter()
        .flat_map(|e| &e.samples)
        .all(|s| s.mask.len() == 7));
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.demo");
    let b = dir.path().join("b.demo");
    small(3, 99).save(&a).unwrap();
    small(3, 99).save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(small(3, 98).to_text(), small(3, 99).to_text());
}

#[test]
fn recorded_scores_match_independent_expert_run() {
    let a = arena();
    let ds = small(30, 5);
    let (mean, std) = ds.score_stats();
    // independent evaluation on other seeds
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let scores: Vec<f64> = (0..30)
        .map(|e| {
            let (mut s, _) = a.reset(500 + e);
            while !s.done {
                let m =
                    mail_core::arena::scripted_expert(&a, &s, &ExpertConfig::default(), &mut rng);
                a.step(&mut s, &m).unwrap();
            }
            s.score
        })
        .collect();
    let eval_mean = scores.iter().sum::<f64>() / 30.0;
    let band = 3.0 * (2.0 * std * std / 30.0).sqrt();
    assert!(
        (mean - eval_mean).abs() <= band,
        "dataset mean {mean}, evaluation mean {eval_mean}, band {band}"
    );
    let summed: f64 = ds.episodes[0].samples.iter().map(|s| s.reward).sum();
    assert!((summed - ds.episodes[0].score).abs() < 1e-9);
}

#[test]
fn save_load_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.demo");
    let ds = small(3, 1);
    ds.save(&path).unwrap();
    assert_eq!(DemoDataset::load(&path).unwrap(), ds);

    let t = toy(&[4, 6], vec![1], 3);
    assert_eq!(DemoDataset::from_bytes(t.to_text().as_bytes()).unwrap(), t);
}

#[test]
fn truncation_reports_byte_offset() {
    let text = small(2, 1).to_text();
    let bytes = text.as_bytes();
    let cut = bytes.len() / 2 + 17;
    match DemoDataset::from_bytes(&bytes[..cut]) {
        Err(DatasetError::Truncated { offset }) => {
            assert!(offset as usize <= cut && offset > 0);
            assert_eq!(bytes[offset as usize - 1], b'\n');
        }
        other => panic!("expected truncation, got {other:?}"),
    }
    // cut exactly at a line boundary: the footer is missing
    let boundary = text[..cut].rfind('\n').unwrap() + 1;
    assert!(matches!(
        DemoDataset::from_bytes(&bytes[..boundary]),
        Err(DatasetError::Truncated { offset }) if offset as usize == boundary
    ));
}

#[test]
fn corrupted_line_fails_checksum() {
    let text = small(1, 1).to_text();
    let at = text.find("\ns ").unwrap() + 4;
    let mut bytes = text.into_bytes();
    bytes[at] = if bytes[at] == b'A' { b'B' } else { b'A' };
    assert!(matches!(
        DemoDataset::from_bytes(&bytes),
        Err(DatasetError::Checksum { line: 6, .. })
    ));
}

#[test]
fn version_mismatch_is_distinct() {
    let text = toy(&[2], vec![], 1)
        .to_text()
        .replacen("MAILDEMO 1", "MAILDEMO 2", 1);
    assert!(matches!(
        DemoDataset::from_bytes(text.as_bytes()),
        Err(DatasetError::Version {
            found: 2,
            expected: 1
        })
    ));
    assert!(matches!(
        DemoDataset::from_bytes(b"hello\n"),
        Err(DatasetError::Malformed { .. }) | Err(DatasetError::BadMagic)
    ));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("v.demo");
    std::fs::write(&p, text).unwrap();
    assert!(matches!(
        DemoDataset::load(&p),
        Err(Error::Dataset(DatasetError::Version { .. }))
    ));
}

#[test]
fn zero_noise_returns_stored_records() {
    let ds = toy(&[5, 5, 5], vec![2], 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = sample_expert_batch(&ds, DEPTH, 8, &mut rng, NoiseConfig::NONE).unwrap();
    assert_eq!(b, ds.gather(&b.indices, DEPTH));
    for (row, &i) in b.indices.iter().enumerate() {
        let r = ds.locate(i).unwrap();
        let s = ds.sample(r);
        assert_eq!(b.feats.row(row), &s.features[..]);
        assert_eq!(b.masks.row(row), &s.mask.to_f64()[..]);
        assert_eq!(b.obs.row(row), &ds.stacked_observation(r, DEPTH)[..]);
    }
}

#[test]
fn stacks_repeat_first_frame_at_episode_start() {
    let ds = toy(&[3, 3], vec![], 4);
    let r = ds.locate(3).unwrap();
    assert_eq!((r.episode, r.step), (1, 0));
    let first = ds.sample(r).frame.to_f64();
    assert_eq!(ds.stacked_observation(r, DEPTH), first.repeat(DEPTH));
    let r = ds.locate(5).unwrap();
    let v = ds.stacked_observation(r, DEPTH);
    let n = first.len();
    assert_eq!(&v[..n], &first[..]);
    assert_eq!(&v[3 * n..], &ds.sample(r).frame.to_f64()[..]);
}

#[test]
fn observation_noise_has_folded_normal_magnitude() {
    let ds = small(2, 3);
    let sigma = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noisy = sample_expert_batch(
        &ds,
        DEPTH,
        40,
        &mut rng,
        NoiseConfig {
            obs_std: sigma,
            feat_std: 0.3,
        },
    )
    .unwrap();
    let clean = ds.gather(&noisy.indices, DEPTH);
    let diffs: Vec<f64> = noisy
        .obs
        .as_slice()
        .iter()
        .zip(clean.obs.as_slice())
        .map(|(a, b)| (a - b).abs())
        .collect();
    assert!(diffs.len() >= 100_000);
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let expected = sigma * (2.0 / std::f64::consts::PI).sqrt();
    assert!(
        ((mean - expected) / expected).abs() < 0.02,
        "{mean} vs {expected}"
    );
    assert_eq!(noisy.masks, clean.masks);
    // the stored data is untouched
    assert_eq!(ds, small(2, 3));
}

#[test]
fn same_seed_same_batch() {
    let ds = toy(&[10, 10], vec![0], 5);
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_expert_batch(&ds, DEPTH, 6, &mut rng, NoiseConfig::default()).unwrap()
    };
    assert_eq!(draw(8), draw(8));
    assert_ne!(draw(8), draw(9));
}

#[test]
fn sampling_is_uniform_over_training_split() {
    let ds = toy(&[100], vec![], 6);
    let sampler = ExpertSampler::new(&ds, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts = vec![0usize; 100];
    for _ in 0..10_000 {
        for i in sampler
            .sample(&ds, 100, &mut rng, NoiseConfig::NONE)
            .unwrap()
            .indices
        {
            counts[i] += 1;
        }
    }
    for (i, &c) in counts.iter().enumerate() {
        let rel = (c as f64 - 10_000.0).abs() / 10_000.0;
        assert!(rel <= 0.05, "sample {i} drawn {c} times");
    }
}

#[test]
fn heldout_never_sampled() {
    let ds = small(10, 11);
    let train = ds.train_indices();
    let held = ds.heldout_indices();
    assert!(!held.is_empty());
    assert_eq!(train.len() + held.len(), ds.n_samples());
    assert!(held.iter().all(|h| train.binary_search(h).is_err()));
    let sampler = ExpertSampler::new(&ds, DEPTH).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let b = sampler
            .sample(&ds, 64, &mut rng, NoiseConfig::NONE)
            .unwrap();
        assert!(b.indices.iter().all(|i| held.binary_search(i).is_err()));
    }
}

#[test]
fn empty_and_oversized_requests_fail() {
    let ds = toy(&[], vec![], 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(sample_expert_batch(&ds, 1, 1, &mut rng, NoiseConfig::NONE).is_err());
    let ds = toy(&[3], vec![], 1);
    assert!(sample_expert_batch(&ds, 1, 4, &mut rng, NoiseConfig::NONE).is_err());
    assert!(record_scripted(&arena(), &ExpertConfig::default(), 0, 1, 0.1).is_err());
}

struct Constant(Vec<f64>);

impl MarginalPolicy for Constant {
    fn marginals(&self, obs: Matrix, _: Matrix) -> mail_core::Result<Vec<Vec<f64>>> {
        Ok(vec![self.0.clone(); obs.rows()])
    }
}

struct Memorizer(HashMap<Vec<u64>, Vec<f64>>);

impl MarginalPolicy for Memorizer {
    fn marginals(&self, obs: Matrix, _: Matrix) -> mail_core::Result<Vec<Vec<f64>>> {
        Ok((0..obs.rows())
            .map(|r| self.0[&obs.row(r).iter().map(|x| x.to_bits()).collect::<Vec<_>>()].clone())
            .collect())
    }
}

fn heldout_masks(ds: &DemoDataset) -> Vec<ActionMask> {
    ds.heldout_indices()
        .into_iter()
        .map(|i| ds.sample(ds.locate(i).unwrap()).mask.clone())
        .collect()
}

#[test]
fn accuracy_of_most_frequent_mask_is_its_frequency() {
    let ds = small(10, 2);
    let masks = heldout_masks(&ds);
    let mut freq: HashMap<&ActionMask, usize> = HashMap::new();
    for m in &masks {
        *freq.entry(m).or_default() += 1;
    }
    let (top, count) = freq.iter().max_by_key(|(_, &c)| c).unwrap();
    let acc = heldout_action_accuracy(&ds, &Constant(top.to_f64()), DEPTH, 0.5).unwrap();
    assert_eq!(acc, *count as f64 / masks.len() as f64);
}

#[test]
fn half_marginals_match_only_all_ones() {
    let ds = toy(&[50, 50, 50], vec![0, 2], 9);
    let masks = heldout_masks(&ds);
    let ones = masks.iter().filter(|m| m.count_ones() == 7).count();
    let acc = heldout_action_accuracy(&ds, &Constant(vec![0.5; 7]), DEPTH, 0.5).unwrap();
    assert_eq!(acc, ones as f64 / masks.len() as f64);
}

#[test]
fn memorizer_scores_perfectly() {
    let ds = toy(&[5, 10], vec![1], 10);
    let mut table = HashMap::new();
    for i in ds.heldout_indices() {
        let r = ds.locate(i).unwrap();
        let key = ds
            .stacked_observation(r, DEPTH)
            .iter()
            .map(|x| x.to_bits())
            .collect();
        table.insert(key, ds.sample(r).mask.to_f64());
    }
    assert_eq!(ds.heldout_indices().len(), 10);
    let acc = heldout_action_accuracy(&ds, &Memorizer(table), DEPTH, 0.5).unwrap();
    assert_eq!(acc, 1.0);
    let empty = toy(&[5], vec![], 1);
    assert!(heldout_action_accuracy(&empty, &Constant(vec![0.5; 7]), DEPTH, 0.5).is_err());
}
