//! Per-seed score curves, their aggregation across seeds and CSV export.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mail_core::trainer::{MetricsRow, Mode};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct CellCurve {
    pub mode: Mode,
    pub seed: u64,
    pub steps: Vec<u64>,
    pub scores: Vec<f64>,
    pub actions_per_step: Vec<f64>,
}

impl CellCurve {
    pub fn from_rows(mode: Mode, seed: u64, rows: &[MetricsRow]) -> Self {
        Self {
            mode,
            seed,
            steps: rows.iter().map(|r| r.step).collect(),
            scores: rows.iter().map(|r| r.eval_score_mean).collect(),
            actions_per_step: rows.iter().map(|r| r.actions_per_step).collect(),
        }
    }
}

/// One aggregated curve point; `score_std` is the population standard
/// deviation of the per-seed evaluation means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub mode: Mode,
    pub step: u64,
    pub seeds: usize,
    pub score_mean: f64,
    pub score_std: f64,
    pub actions_per_step_mean: f64,
}

#[derive(Debug, Deserialize)]
struct RowIn {
    step: u64,
    eval_score_mean: f64,
    actions_per_step: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and std across seeds at each step. Seeds of one mode must share
/// the same step grid.
pub fn aggregate(curves: &[CellCurve]) -> Result<Vec<CurvePoint>, CliError> {
    let mut by_mode: BTreeMap<&str, Vec<&CellCurve>> = BTreeMap::new();
    for c in curves {
        by_mode.entry(c.mode.name()).or_default().push(c);
    }
    let mut order: Vec<Mode> = Mode::ALL.to_vec();
    order.retain(|m| by_mode.contains_key(m.name()));
    let mut out = Vec::new();
    for mode in order {
        let cells = &by_mode[mode.name()];
        let steps = &cells[0].steps;
        if let Some(bad) = cells.iter().find(|c| &c.steps != steps) {
            return Err(CliError::Config(format!(
                "{mode}: seed {} logged a different step grid from seed {}",
                bad.seed, cells[0].seed
            )));
        }
        for (i, &step) in steps.iter().enumerate() {
            let scores: Vec<f64> = cells.iter().map(|c| c.scores[i]).collect();
            let aps: Vec<f64> = cells.iter().map(|c| c.actions_per_step[i]).collect();
            let (score_mean, score_std) = mean_std(&scores);
            out.push(CurvePoint {
                mode,
                step,
                seeds: cells.len(),
                score_mean,
                score_std,
                actions_per_step_mean: mean_std(&aps).0,
            });
        }
    }
    Ok(out)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_seed(file: &Path) -> Option<u64> {
    file.file_stem()?
        .to_str()?
        .strip_prefix("seed-")?
        .parse()
        .ok()
}

/// Reads every completed cell of a run directory, skipping cells marked
/// as failed.
pub fn read_run_dir(dir: &Path) -> Result<Vec<CellCurve>, CliError> {
    let mut curves = Vec::new();
    for mode in Mode::ALL {
        let mode_dir = dir.join(mode.name());
        if !mode_dir.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&mode_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for file in files {
            let Some(seed) = parse_seed(&file) else {
                continue;
            };
            if file.with_extension("failed").exists() {
                log::warn!("skipping failed cell {}", file.display());
                continue;
            }
            let mut r = csv::Reader::from_path(&file)?;
            let rows: Vec<RowIn> = r.deserialize().collect::<Result<_, _>>()?;
            curves.push(CellCurve {
                mode,
                seed,
                steps: rows.iter().map(|r| r.step).collect(),
                scores: rows.iter().map(|r| r.eval_score_mean).collect(),
                actions_per_step: rows.iter().map(|r| r.actions_per_step).collect(),
            });
        }
    }
    if curves.is_empty() {
        return Err(CliError::Config(format!(
            "no completed runs under {}",
            dir.display()
        )));
    }
    curves.sort_by_key(|c| c.seed);
    Ok(curves)
}

/// Writes `curves/<mode>.csv` for every mode present plus the tidy
/// `curves/score_vs_steps.csv` holding all of them.
pub fn export_curves(run_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let points = aggregate(&read_run_dir(run_dir)?)?;
    let out = run_dir.join("curves");
    fs::create_dir_all(&out)?;
    let mut written = Vec::new();
    for mode in Mode::ALL {
        let rows: Vec<&CurvePoint> = points.iter().filter(|p| p.mode == mode).collect();
        if rows.is_empty() {
            continue;
        }
        let path = out.join(format!("{}.csv", mode.name()));
        write_csv(&path, &rows)?;
        written.push(path);
    }
    let all = out.join("score_vs_steps.csv");
    write_csv(&all, &points)?;
    written.push(all);
    Ok(written)
}
