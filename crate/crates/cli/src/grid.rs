//! The (mode, seed) training grid and its on-disk layout:
//!
//! ```text
//! <out>/config.toml          resolved configuration
//! <out>/<mode>/seed-<s>.csv  metrics rows of one cell
//! <out>/<mode>/seed-<s>.ckpt final checkpoint
//! <out>/<mode>/seed-<s>.failed  present when the cell failed
//! <out>/summary.csv          one line per cell
//! <out>/aggregate.csv        per-step mean and std across seeds
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use mail_core::expert_data::DemoDataset;
use mail_core::trainer::{MetricsRow, Mode, Trainer};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::curves::{aggregate, write_csv, CellCurve};
use crate::CliError;

pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

pub fn cell_path(out: &Path, mode: Mode, seed: u64, ext: &str) -> PathBuf {
    out.join(mode.name()).join(format!("seed-{seed}.{ext}"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub mode: Mode,
    pub seed: u64,
    pub status: String,
    pub steps: u64,
    pub final_score: f64,
    pub final_actions_per_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub cells: Vec<CellSummary>,
}

impl GridOutcome {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.status != "ok").count()
    }
}

fn prepare_out_dir(out: &Path) -> Result<(), CliError> {
    if out.exists() {
        let nonempty = fs::read_dir(out)?.next().is_some();
        if nonempty {
            return Err(CliError::Config(format!(
                "output directory {} is not empty; pick a fresh --out",
                out.display()
            )));
        }
    }
    fs::create_dir_all(out)?;
    Ok(())
}

fn load_expert(cfg: &ExperimentConfig) -> Result<Option<DemoDataset>, CliError> {
    if !cfg.grid.modes.iter().any(|m| m.needs_expert()) {
        return Ok(None);
    }
    let path = &cfg.grid.expert_path;
    if !path.exists() {
        let modes: Vec<_> = cfg
            .grid
            .modes
            .iter()
            .filter(|m| m.needs_expert())
            .map(|m| m.name())
            .collect();
        return Err(CliError::Config(format!(
            "modes {} need expert demonstrations but {} does not exist; \
             record one with `mail record-scripted --out {}`",
            modes.join(", "),
            path.display(),
            path.display()
        )));
    }
    Ok(Some(DemoDataset::load(path)?))
}

fn run_cell(
    cfg: &ExperimentConfig,
    mode: Mode,
    seed: u64,
    expert: Option<&DemoDataset>,
    out: &Path,
) -> Result<Vec<MetricsRow>, CliError> {
    let mut train = cfg.train.clone();
    train.mode = mode;
    train.seed = seed;
    let expert = if mode.needs_expert() {
        expert.cloned()
    } else {
        None
    };
    let mut trainer = Trainer::new(train, cfg.env.clone(), expert)?;
    let csv_path = cell_path(out, mode, seed, "csv");
    fs::create_dir_all(csv_path.parent().expect("cell path has a parent"))?;
    let mut w = csv::Writer::from_path(&csv_path)?;
    let mut write_err = None;
    let rows = trainer.run(|row| {
        if write_err.is_none() {
            if let Err(e) = w.serialize(row).and_then(|_| w.flush().map_err(Into::into)) {
                write_err = Some(e);
            }
        }
        log::info!(
            "{mode} seed {seed} step {} score {:.3} +- {:.3} aps {:.2}",
            row.step,
            row.eval_score_mean,
            row.eval_score_std,
            row.actions_per_step
        );
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    if cfg.grid.checkpoints {
        let mut ckpt = trainer.checkpoint();
        ckpt.meta.insert(
            "train_config".into(),
            toml::to_string(&trainer.cfg).expect("serialises"),
        );
        ckpt.meta.insert(
            "env_config".into(),
            toml::to_string(&cfg.env).expect("serialises"),
        );
        ckpt.save(cell_path(out, mode, seed, "ckpt"))?;
    }
    Ok(rows)
}

/// Runs every cell, continuing past failures. Each failed cell leaves a
/// `.failed` marker next to its partial CSV.
pub fn run_grid(cfg: &ExperimentConfig) -> Result<GridOutcome, CliError> {
    let out = cfg.grid.out_dir.clone();
    let expert = load_expert(cfg)?;
    prepare_out_dir(&out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml())?;
    let mut cells = Vec::new();
    let mut curves = Vec::new();
    for &mode in &cfg.grid.modes {
        for &seed in &cfg.grid.seeds {
            log::info!("cell {mode} seed {seed}");
            match run_cell(cfg, mode, seed, expert.as_ref(), &out) {
                Ok(rows) => {
                    let last = rows.last().expect("run emits at least one row");
                    cells.push(CellSummary {
                        mode,
                        seed,
                        status: "ok".into(),
                        steps: last.step,
                        final_score: last.eval_score_mean,
                        final_actions_per_step: last.actions_per_step,
                    });
                    curves.push(CellCurve::from_rows(mode, seed, &rows));
                }
                Err(e) => {
                    log::error!("cell {mode} seed {seed} failed: {e}");
                    let marker = cell_path(&out, mode, seed, "failed");
                    fs::create_dir_all(marker.parent().expect("cell path has a parent"))?;
                    fs::write(&marker, format!("{e}\n"))?;
                    cells.push(CellSummary {
                        mode,
                        seed,
                        status: format!("failed: {e}"),
                        steps: 0,
                        final_score: f64::NAN,
                        final_actions_per_step: f64::NAN,
                    });
                }
            }
        }
    }
    write_csv(&out.join(SUMMARY_FILE), &cells)?;
    write_csv(&out.join(AGGREGATE_FILE), &aggregate(&curves)?)?;
    Ok(GridOutcome { cells })
}
