use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mail_cli::config::{ExperimentConfig, DEFAULT_TEMPLATE, ENV_PREFIX};
use mail_cli::{cmd_eval, cmd_record_scripted, cmd_serve, curves, grid, CliError};
use mail_core::trainer::Mode;

#[derive(Parser)]
#[command(
    name = "mail",
    version,
    about = "Concurrent-action imitation and actor-critic experiments"
)]
#[command(after_help = "Any config key can be overridden with MAIL__<SECTION>__<KEY>=<value>.")]
struct Cli {
    /// TOML experiment file; defaults apply for anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the subcommand (grid seed list, recording, eval start or server).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location (run directory, dataset file or recording file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the (mode, seed) training grid.
    Train {
        /// Comma-separated modes, replacing grid.modes.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<Mode>>,
        /// Comma-separated seeds, replacing grid.seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Replaces train.total_steps.
        #[arg(long)]
        steps: Option<u64>,
        /// Demonstration file, replacing grid.expert_path.
        #[arg(long)]
        expert_path: Option<PathBuf>,
    },
    /// Record scripted-expert demonstrations and print their statistics.
    RecordScripted {
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Greedy evaluation of a checkpoint written by `train`.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Aggregate a run directory into per-mode curve CSVs.
    ExportCurves {
        /// Run directory; defaults to --out or grid.out_dir.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Serve the browser demo over WebSocket and record play.
    ServeDemo {
        #[arg(long)]
        addr: Option<String>,
        /// Ticks per second; 0 advances one tick per input frame.
        #[arg(long)]
        tick_hz: Option<f64>,
    },
    /// Print the commented default configuration.
    DefaultConfig,
}

fn run(cli: Cli) -> Result<bool, CliError> {
    if let Cmd::DefaultConfig = cli.command {
        print!("{DEFAULT_TEMPLATE}");
        return Ok(true);
    }
    let vars = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX));
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), vars)?;
    match cli.command {
        Cmd::Train {
            modes,
            seeds,
            steps,
            expert_path,
        } => {
            if let Some(m) = modes {
                cfg.grid.modes = m;
            }
            if let Some(s) = seeds {
                cfg.grid.seeds = s;
            }
            if let Some(s) = cli.seed {
                cfg.grid.seeds = vec![s];
            }
            if let Some(s) = steps {
                cfg.train.total_steps = s;
            }
            if let Some(p) = expert_path {
                cfg.grid.expert_path = p;
            }
            if let Some(o) = cli.out {
                cfg.grid.out_dir = o;
            }
            cfg.validate()?;
            let outcome = grid::run_grid(&cfg)?;
            for c in &outcome.cells {
                println!(
                    "{:<16} seed {:<4} {:<8} final score {:>8.3} actions/step {:.2}",
                    c.mode.name(),
                    c.seed,
                    if c.status == "ok" { "ok" } else { "FAILED" },
                    c.final_score,
                    c.final_actions_per_step
                );
            }
            println!("results in {}", cfg.grid.out_dir.display());
            Ok(outcome.failed() == 0)
        }
        Cmd::RecordScripted { episodes } => {
            if let Some(e) = episodes {
                cfg.record.episodes = e;
            }
            if let Some(s) = cli.seed {
                cfg.record.seed = s;
            }
            let out = cli.out.unwrap_or_else(|| cfg.grid.expert_path.clone());
            let stats = cmd_record_scripted(&cfg, &out)?;
            print!("{}", stats.table());
            println!("written to {}", out.display());
            Ok(true)
        }
        Cmd::Eval {
            checkpoint,
            episodes,
        } => {
            let episodes = episodes.unwrap_or(cfg.train.eval_episodes);
            let seed = cli.seed.unwrap_or(cfg.train.eval_seed);
            let report = cmd_eval(&checkpoint, episodes, seed)?;
            println!("{}", report.text());
            Ok(true)
        }
        Cmd::ExportCurves { run_dir } => {
            let dir = run_dir
                .or(cli.out)
                .unwrap_or_else(|| cfg.grid.out_dir.clone());
            for p in curves::export_curves(&dir)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Cmd::ServeDemo { addr, tick_hz } => {
            if let Some(a) = addr {
                cfg.serve.addr = a;
            }
            if let Some(t) = tick_hz {
                cfg.serve.tick_hz = t;
            }
            if let Some(s) = cli.seed {
                cfg.serve.seed = s;
            }
            if let Some(o) = cli.out {
                cfg.serve.out_path = o;
            }
            cmd_serve(&cfg)?;
            Ok(true)
        }
        Cmd::DefaultConfig => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: one or more grid cells failed; see the .failed markers");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
