// Copyright 2026 The QMLA Authors
// SPDX-License-Identifier: Apache-2.0

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qmla::harness::{estimate_runtime, load_config, report_directory, run_batch, run_bath, RuntimeInputs};
use qmla::QmlaError;

const EXIT_ERROR: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "qmla", version, about = "Bayesian model learning for spin Hamiltonians")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of independent model searches.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Estimate the spin-bath size and T2 from Hahn-echo data.
    Bath {
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the expected wall-clock time of one instance.
    Estimate {
        config: PathBuf,
        /// Seconds per Hamiltonian exponentiation.
        #[arg(long, default_value_t = 5e-4)]
        t_h: f64,
    },
    /// Re-aggregate the instance files in an output directory.
    Report { dir: PathBuf },
}

fn workers_override() -> Result<Option<usize>, QmlaError> {
    match std::env::var("QMLA_WORKERS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| QmlaError::Config(format!("QMLA_WORKERS: expected a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn exit_code(err: &QmlaError) -> u8 {
    match err {
        QmlaError::Config(_) | QmlaError::Json(_) | QmlaError::Parse { .. } | QmlaError::DuplicateTerm(_) => {
            EXIT_CONFIG
        }
        _ => EXIT_ERROR,
    }
}

fn execute(command: Command) -> Result<u8, QmlaError> {
    match command {
        Command::Run {
            config,
            out,
            instances,
            seed,
            parallelism,
        } => {
            let mut config = load_config(&config)?;
            if let Some(n) = instances {
                config.instances = n;
            }
            if let Some(s) = seed {
                config.seed = s;
            }
            if let Some(p) = parallelism {
                config.parallelism = p;
            }
            if let Some(p) = workers_override()? {
                config.parallelism = p;
            }
            config.validate()?;
            log::info!("effective config:\n{}", config.to_pretty_json()?);
            let outcome = run_batch(&config, &out)?;
            println!("{}", serde_json::to_string_pretty(&outcome.report)?);
            Ok(if outcome.report.failures.is_empty() {
                0
            } else {
                EXIT_PARTIAL
            })
        }
        Command::Bath { config, data, out } => {
            let config = load_config(&config)?;
            let (report, _) = run_bath(&config, &data, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(0)
        }
        Command::Estimate { config, t_h } => {
            if !(t_h >= 0.0) {
                return Err(QmlaError::Config(format!("t_h: must be non-negative, got {t_h}")));
            }
            let mut config = load_config(&config)?;
            if let Some(p) = workers_override()? {
                config.parallelism = p;
            }
            let inputs = RuntimeInputs::for_rule(
                &config.growth,
                config.num_particles,
                config.num_epochs,
                config.parallelism,
            );
            let seconds = estimate_runtime(&inputs, t_h);
            println!(
                "{}",
                serde_json::json!({ "seconds": seconds, "hours": seconds / 3600.0, "inputs": inputs })
            );
            Ok(0)
        }
        Command::Report { dir } => {
            let report = report_directory(&dir)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.failures.is_empty() { 0 } else { EXIT_PARTIAL })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
