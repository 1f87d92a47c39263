//! Experiment driver. Every subcommand reads declarative JSON configs (or
//! a trained model's stored snapshot), writes its artifacts under `--out`,
//! and exits 0 on success, 1 on invalid input, 2 on a runtime failure.
//! Log verbosity comes from `RUST_LOG` (default `info`, written to
//! stderr); stdout carries one stable line per command — the primary
//! artifact path — so scripts can chain commands without parsing logs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use tcwm::config::{self, ExperimentConfig, PlannerKind};
use tcwm::experiment::{self, AblatePreset};

#[derive(Parser)]
#[command(
    name = "tcwm",
    version,
    about = "Task-centric world models on synthetic control worlds"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an offline trajectory dataset under `<out>/dataset`.
    Gen {
        /// Config overlay file; may repeat, later files win. Defaults
        /// apply for everything left unset.
        #[arg(long = "config", value_name = "FILE")]
        configs: Vec<PathBuf>,
        /// Override the merged config's global seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output root (default: the config's `out_dir`).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train a world model on a dataset; writes `<out>/model`.
    Train {
        #[arg(long = "config", value_name = "FILE")]
        configs: Vec<PathBuf>,
        /// Dataset directory written by `gen`.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Probe a trained model's representation on a dataset.
    Probe {
        /// Model directory written by `train`.
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Check the working assumptions behind affine recovery; emits an
    /// assumption report.
    Verify {
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Run closed-loop goal-reaching episodes against a random baseline.
    Plan {
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        /// Episode count (default: the model config's episode budget).
        #[arg(long, value_name = "N")]
        episodes: Option<usize>,
        /// Planner override: `cem` or `ldp`.
        #[arg(long, value_parser = parse_planner)]
        planner: Option<PlannerKind>,
        /// Offline dataset; required by the diffusion planner, which
        /// trains on it.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Train preset variants against the unmodified config and tabulate
    /// representation metrics.
    Ablate {
        #[arg(long = "config", value_name = "FILE")]
        configs: Vec<PathBuf>,
        /// One of: no-rec, no-align, direct-embedding, split-sweep.
        #[arg(long, value_name = "NAME")]
        preset: String,
        /// Reuse an existing dataset instead of generating one.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn parse_planner(s: &str) -> Result<PlannerKind, String> {
    match s {
        "cem" => Ok(PlannerKind::Cem),
        "ldp" => Ok(PlannerKind::Ldp),
        _ => Err(format!("expected \"cem\" or \"ldp\", got {s:?}")),
    }
}

/// Config files merged in order, with a CLI seed as the last overlay.
fn load_layers(
    configs: &[PathBuf],
    seed: Option<u64>,
) -> experiment::Result<Vec<(String, Value)>> {
    let mut layers = Vec::with_capacity(configs.len() + 1);
    for path in configs {
        layers.push(config::parse_file(path)?);
    }
    if let Some(s) = seed {
        layers.push(("--seed".to_string(), serde_json::json!({ "seed": s })));
    }
    Ok(layers)
}

fn run(cmd: Cmd) -> experiment::Result<PathBuf> {
    match cmd {
        Cmd::Gen { configs, seed, out } => {
            let cfg = ExperimentConfig::from_layers(&load_layers(&configs, seed)?)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            experiment::run_gen(&cfg, &out)
        }
        Cmd::Train { configs, data, seed, out } => {
            let cfg = ExperimentConfig::from_layers(&load_layers(&configs, seed)?)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            experiment::run_train(&cfg, &data, &out).map(|(dir, _)| dir)
        }
        Cmd::Probe { model, data, out } => {
            experiment::run_probe(&model, &data, &out)?;
            Ok(out.join("probe_report.json"))
        }
        Cmd::Verify { model, data, out } => {
            experiment::run_verify(&model, &data, &out)?;
            Ok(out.join("assumption_report.json"))
        }
        Cmd::Plan { model, episodes, planner, data, out } => {
            experiment::run_plan(&model, episodes, planner, data.as_deref(), &out)?;
            Ok(out.join("plan_report.json"))
        }
        Cmd::Ablate { configs, preset, data, seed, out } => {
            let preset = AblatePreset::parse(&preset)?;
            let layers = load_layers(&configs, seed)?;
            let base = ExperimentConfig::from_layers(&layers)?;
            let out = out.unwrap_or_else(|| base.out_dir.clone());
            experiment::run_ablate(&layers, preset, data.as_deref(), &out)?;
            Ok(out.join("ablate_report.json"))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests arrive here too; only genuine
            // usage errors are validation failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(artifact) => {
            println!("{}", artifact.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
