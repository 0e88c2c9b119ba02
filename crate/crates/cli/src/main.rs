//! Command-line front end: scenario files, parameter sweeps, simulation and
//! the validation suite, with CSV output.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{PolicyKind, ScenarioConfig};
use crate::error::CliError;
use crate::output::{emit, render, Provenance};

#[derive(Debug, Parser)]
#[command(
    name = "fbl-relay",
    version,
    about = "Finite-blocklength relay scheduling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (TOML). The reference operating point is used when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Output file; standard output when absent.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Frames per simulation run.
    #[arg(long, global = true, value_name = "N")]
    frames: Option<u64>,

    #[arg(long, global = true, value_enum)]
    policy: Option<PolicyKind>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Throughput over a grid of scheduling weights.
    Surface,
    /// Optimal and constant policies against the average SNR.
    SweepSnr,
    /// Optimal and constant policies against the reliability target.
    SweepEps,
    /// Monte Carlo run of one policy.
    Simulate,
    /// Oracle checks of the numerical core.
    Validate {
        /// Full-size suite instead of the configured profile.
        #[arg(long)]
        full: bool,
    },
}

fn load(cli: &Cli) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(frames) = cli.frames {
        cfg.frames = frames;
        cfg.sweep.frames = frames;
    }
    if let Some(policy) = cli.policy {
        cfg.policy = policy;
    }
    if let Some(out) = &cli.out {
        cfg.output_path = Some(out.clone());
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli)?;
    let (name, table) = match &cli.command {
        Command::Surface => ("surface", commands::surface(&cfg)?),
        Command::SweepSnr => ("sweep-snr", commands::sweep_snr(&cfg)?),
        Command::SweepEps => ("sweep-eps", commands::sweep_eps(&cfg)?),
        Command::Simulate => ("simulate", commands::simulate(&cfg)?),
        Command::Validate { full } => {
            let reports = commands::validate(&cfg, *full)?;
            for r in &reports {
                println!(
                    "{} {} {} [{:.1} s] {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.id,
                    r.name,
                    r.elapsed.as_secs_f64(),
                    r.summary
                );
                if !r.passed {
                    for d in &r.details {
                        println!("    {d}");
                    }
                }
            }
            if let Some(path) = &cfg.output_path {
                let canonical = cfg.canonical();
                let prov = Provenance {
                    command: "validate",
                    config_canonical: &canonical,
                    seed: cfg.seed,
                };
                emit(
                    &render(&commands::validation_table(&reports), &prov),
                    Some(path),
                )?;
            }
            let failed = reports.iter().filter(|r| !r.passed).count();
            return if failed == 0 {
                Ok(())
            } else {
                Err(CliError::ValidationFailed(failed))
            };
        }
    };
    let canonical = cfg.canonical();
    let prov = Provenance {
        command: name,
        config_canonical: &canonical,
        seed: cfg.seed,
    };
    emit(&render(&table, &prov), cfg.output_path.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
