mod commands;
mod config;
mod selftest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use rcm_core::output::{write_rows_to_path, Manifest};

use crate::commands::Outcome;
use crate::config::{Flags, RunConfig};

/// Random-cluster model toolkit: exact oracles, samplers, the q = 2
/// observable and scaling experiments.
#[derive(Parser, Debug)]
#[command(name = "rcm", version)]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact distribution of a small rectangle (width x height)
    Oracle,
    /// Run the heat-bath chain and write a snapshot
    Sweeny,
    /// Run the coupling chain and write labels and clouds
    Coupling,
    /// Exact q = 2 observable and its local relations
    Observable,
    /// Run one of the scaling experiments
    Experiment {
        /// crossing | correlation_length | one_arm | pivotal | edge_intensity |
        /// edge_intensity_derivative | influence | clouds | kesten | exponents
        name: String,
    },
    /// Quick internal consistency checks
    Selftest,
}

fn configure_pool() -> Result<()> {
    if let Ok(v) = std::env::var("RCM_THREADS") {
        let n: usize = v.parse().context("RCM_THREADS must be a positive integer")?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn finish(stem: &str, command: &str, cfg: &RunConfig, out: &Path, outcome: Outcome, start: Instant) -> Result<bool> {
    let csv = format!("{stem}.csv");
    write_rows_to_path(&out.join(&csv), &outcome.rows)?;
    let mut m = Manifest::new(command, serde_json::to_value(cfg)?);
    m.outputs.push(csv);
    m.outputs.extend(outcome.files);
    m.rows = outcome.rows.len();
    m.wall_time_seconds = start.elapsed().as_secs_f64();
    m.write(&out.join(format!("{stem}.manifest.json")))?;
    for f in &outcome.failures {
        eprintln!("warning: {f}");
    }
    Ok(outcome.failures.is_empty())
}

fn run(cli: Cli) -> Result<bool> {
    configure_pool()?;
    let cfg = RunConfig::resolve(&cli.flags)?;
    eprintln!("{}", serde_json::to_string(&cfg)?);
    if let Command::Selftest = cli.command {
        return Ok(selftest::run() == 0);
    }
    let out = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let start = Instant::now();
    let (stem, command, outcome) = match &cli.command {
        Command::Oracle => ("oracle", "oracle".to_string(), commands::oracle(&cfg, &out)?),
        Command::Sweeny => ("sweeny", "sweeny".to_string(), commands::sweeny(&cfg, &out)?),
        Command::Coupling => ("coupling", "coupling".to_string(), commands::coupling(&cfg, &out)?),
        Command::Observable => ("observable", "observable".to_string(), commands::observable(&cfg, &out)?),
        Command::Experiment { name } => (name.as_str(), format!("experiment {name}"), commands::experiment(name, &cfg)?),
        Command::Selftest => unreachable!(),
    };
    let ok = finish(stem, &command, &cfg, &out, outcome, start)?;
    Ok(ok || !cfg.strict)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
