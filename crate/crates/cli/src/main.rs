use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crem_cli::config::{ConfigError, SimConfig};
use crem_cli::experiments::{self, Experiment, RunOptions};

#[derive(Parser)]
#[command(name = "crem", version, about = "Complex-temperature CREM experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output directory for results.csv, verdicts.json and provenance.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Check a speed function against the model requirements.
    ValidateSpeed(Common),
    /// Phase diagram scan of the free-energy rate.
    Scan(Common),
    /// Mean-one and variance checks in the B1 phase.
    B1(Common),
    /// Maximum and extremal cluster statistics in the B2 phase.
    B2(Common),
    /// Second moment and isotropy checks in the B3 phase.
    B3(Common),
    /// Envelope crossing frequencies against the union bound.
    Envelope(Common),
    /// Deterministic moment oracles, no simulation.
    Oracle(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let (experiment, common) = match cli.command {
        Command::ValidateSpeed(c) => (Experiment::ValidateSpeed, c),
        Command::Scan(c) => (Experiment::Scan, c),
        Command::B1(c) => (Experiment::B1, c),
        Command::B2(c) => (Experiment::B2, c),
        Command::B3(c) => (Experiment::B3, c),
        Command::Envelope(c) => (Experiment::Envelope, c),
        Command::Oracle(c) => (Experiment::Oracle, c),
    };
    let text =
        std::fs::read_to_string(&common.config).with_context(|| format!("reading {}", common.config.display()))?;
    let mut cfg = SimConfig::parse(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let opts = RunOptions {
        workers: common.workers,
        only_replicas: None,
    };
    let artifacts = experiments::run(experiment, &cfg, &opts)?;
    artifacts.write(&common.out)?;
    for c in &artifacts.verdicts.checks {
        let status = match c.pass {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "info",
        };
        log::info!("{status} {} t={:?} estimate={:?}", c.name, c.t, c.estimate);
    }
    let v = &artifacts.verdicts;
    let failed = v.checks.iter().filter(|c| c.pass == Some(false)).count();
    println!(
        "{}: {} checks, {} failed, {} overflowed; wrote {}",
        experiment,
        v.checks.len(),
        failed,
        v.overflowed,
        common.out.display()
    );
    Ok(v.all_pass)
}
