//! Experiment file: TOML sections for the grid, trainer, arena, expert,
//! recorder and demo server. Environment variables named
//! `MAIL__<SECTION>__<KEY>` override single keys after the file is read.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use mail_core::arena::{EnvConfig, ExpertConfig};
use mail_core::trainer::{Mode, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

pub const ENV_PREFIX: &str = "MAIL__";

/// Commented template holding every default.
pub const DEFAULT_TEMPLATE: &str = include_str!("../default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub expert_path: PathBuf,
    pub checkpoints: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            modes: Mode::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("runs/grid"),
            expert_path: PathBuf::from("demos/scripted.mdemo"),
            checkpoints: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordConfig {
    pub episodes: usize,
    pub seed: u64,
    pub heldout_frac: f64,
}

impl Default for RecordConfig {
    fn default() -> Self {
        Self {
            episodes: 30,
            seed: 7,
            heldout_frac: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub addr: String,
    pub tick_hz: f64,
    pub seed: u64,
    pub keep_partials: bool,
    pub out_path: PathBuf,
}

impl Default for ServeSection {
    fn default() -> Self {
        let d = mail_bridge::ServeConfig::default();
        Self {
            addr: d.addr,
            tick_hz: d.tick_hz,
            seed: d.seed,
            keep_partials: d.keep_partials,
            out_path: d.out_path,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub expert: ExpertConfig,
    pub record: RecordConfig,
    pub serve: ServeSection,
}

impl ExperimentConfig {
    /// Reads `path` (or the defaults) and applies overrides from `vars`.
    pub fn load(
        path: Option<&Path>,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        apply_overrides(&mut table, vars)?;
        let cfg: Self = Value::Table(table.clone())
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let resolved: Table = toml::from_str(&cfg.to_toml()).expect("own output parses");
        check_known(&table, &resolved, "")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let distinct: BTreeSet<_> = self.grid.seeds.iter().collect();
        if distinct.len() != self.grid.seeds.len() {
            return Err(CliError::Config("grid.seeds must be distinct".into()));
        }
        if self.grid.seeds.is_empty() || self.grid.modes.is_empty() {
            return Err(CliError::Config(
                "grid needs at least one mode and one seed".into(),
            ));
        }
        self.train.validate()?;
        self.env.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }
}

/// Rejects keys that deserialisation silently ignored.
fn check_known(given: &Table, resolved: &Table, prefix: &str) -> Result<(), CliError> {
    for (k, v) in given {
        let name = format!("{prefix}{k}");
        match (v, resolved.get(k)) {
            (_, None) => return Err(CliError::Config(format!("unknown config key `{name}`"))),
            (Value::Table(g), Some(Value::Table(r))) => check_known(g, r, &format!("{name}."))?,
            _ => {}
        }
    }
    Ok(())
}

/// Parses an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn apply_overrides(
    table: &mut Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<(), CliError> {
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let Some((section, key)) = rest.split_once("__") else {
            return Err(CliError::Config(format!(
                "override `{name}` must look like {ENV_PREFIX}<SECTION>__<KEY>"
            )));
        };
        let section = section.to_ascii_lowercase();
        let key = key.to_ascii_lowercase();
        let entry = table
            .entry(section.clone())
            .or_insert_with(|| Value::Table(Table::new()));
        let Value::Table(t) = entry else {
            return Err(CliError::Config(format!("`{section}` is not a section")));
        };
        log::info!("override {section}.{key} = {raw}");
        t.insert(key, parse_value(&raw));
    }
    Ok(())
}
