//! Subcommand implementations behind the `mail` binary.

pub mod config;
pub mod curves;
pub mod grid;

use std::path::Path;

use mail_core::arena::{Arena, EnvConfig};
use mail_core::expert_data::{record_scripted, DemoDataset};
use mail_core::numerics::Checkpoint;
use mail_core::trainer::{build_network, evaluate_greedy, TrainConfig};
use serde::Serialize;

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] mail_core::Error),
    #[error(transparent)]
    Dataset(#[from] mail_core::expert_data::DatasetError),
    #[error(transparent)]
    Serve(#[from] mail_bridge::ServeError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Dataset statistics in the layout of a demonstration summary table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub observations: usize,
    pub episodes: usize,
    pub mean_score: f64,
    pub score_std: f64,
    pub heldout_episodes: usize,
}

impl DatasetStats {
    pub fn of(ds: &DemoDataset) -> Self {
        let (mean_score, score_std) = ds.score_stats();
        Self {
            observations: ds.n_samples(),
            episodes: ds.episodes.len(),
            mean_score,
            score_std,
            heldout_episodes: ds.heldout.len(),
        }
    }

    pub fn table(&self) -> String {
        format!(
            "{:<18}{:>12}\n{:<18}{:>12}\n{:<18}{:>12}\n{:<18}{:>12.3}\n{:<18}{:>12.3}\n",
            "Observations",
            self.observations,
            "Episodes",
            self.episodes,
            "Held out",
            self.heldout_episodes,
            "Mean score",
            self.mean_score,
            "Score std",
            self.score_std
        )
    }
}

pub fn cmd_record_scripted(cfg: &ExperimentConfig, out: &Path) -> Result<DatasetStats, CliError> {
    let arena = Arena::new(cfg.env.clone())?;
    let ds = record_scripted(
        &arena,
        &cfg.expert,
        cfg.record.episodes,
        cfg.record.seed,
        cfg.record.heldout_frac,
    )?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    ds.save(out)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", out.display())))?;
    Ok(DatasetStats::of(&ds))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: String,
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub actions_per_step: f64,
}

impl EvalReport {
    pub fn text(&self) -> String {
        format!(
            "mode {} over {} episodes: mean {:.3} std {:.3} min {:.3} max {:.3} actions/step {:.3}",
            self.mode,
            self.episodes,
            self.mean,
            self.std,
            self.min,
            self.max,
            self.actions_per_step
        )
    }
}

/// Greedy evaluation of a checkpoint written by `train`, on seeds
/// `seed, seed + 1, ...`.
pub fn cmd_eval(checkpoint: &Path, episodes: usize, seed: u64) -> Result<EvalReport, CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let field = |k: &str| {
        ckpt.meta.get(k).ok_or_else(|| {
            CliError::Config(format!(
                "{} lacks `{k}`; evaluate checkpoints written by `mail train`",
                checkpoint.display()
            ))
        })
    };
    let train: TrainConfig = toml::from_str(field("train_config")?)
        .map_err(|e| CliError::Config(format!("train_config in checkpoint: {e}")))?;
    let env: EnvConfig = toml::from_str(field("env_config")?)
        .map_err(|e| CliError::Config(format!("env_config in checkpoint: {e}")))?;
    let (net, mut store) = build_network(&train, &env)?;
    ckpt.restore_into(&mut store)?;
    let arena = Arena::new(env)?;
    let seeds: Vec<u64> = (0..episodes as u64).map(|k| seed + k).collect();
    let r = evaluate_greedy(
        &arena,
        &net,
        &store,
        &seeds,
        train.frame_stack,
        train.greedy_threshold,
    )?;
    Ok(EvalReport {
        mode: train.mode.name().into(),
        episodes,
        mean: r.mean,
        std: r.std,
        min: r.scores.iter().copied().fold(f64::INFINITY, f64::min),
        max: r.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        actions_per_step: r.actions_per_step,
    })
}

pub fn cmd_serve(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let s = &cfg.serve;
    let session = mail_bridge::serve(mail_bridge::ServeConfig {
        addr: s.addr.clone(),
        env: cfg.env.clone(),
        seed: s.seed,
        out_path: s.out_path.clone(),
        tick_hz: s.tick_hz,
        keep_partials: s.keep_partials,
        max_sessions: None,
    })?;
    log::info!("recorded {} episodes", session.dataset().episodes.len());
    Ok(())
}
