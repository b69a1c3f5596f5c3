//! `bhmc`: sampling, experiments and numerical self-checks from the shell.

mod config;
mod error;
mod experiment;
mod output;
mod sample;

use std::path::PathBuf;
use std::process::ExitCode;

use bhmc::selfcheck::{run_checks, CheckOptions, Fault};
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{resolve_with, user_layers, SampleConfig};
use crate::error::CliError;
use crate::experiment::ExperimentName;

#[derive(Parser)]
#[command(name = "bhmc", version = output::VERSION, about = "Barrier Hamiltonian Monte Carlo on polytopes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config file; keys missing from it keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set adapt.burn_in=0.1`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Base seed; replicate r uses seed + r.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicate chains of one sampler and write every draw.
    Sample,
    /// Run a predefined experiment.
    Experiment {
        name: ExperimentName,
        /// Dimension for the bias experiments.
        #[arg(long)]
        d: Option<usize>,
    },
    /// Run the numerical self-check suites; exits 1 if any fails.
    Check {
        #[arg(long, hide = true)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FaultArg {
    TraceTermSign,
}

fn default_out() -> PathBuf {
    PathBuf::from("bhmc-out")
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let layer = || user_layers(cli.config.as_deref(), &cli.sets);
    match cli.command {
        Command::Sample => {
            let mut cfg: SampleConfig = resolve_with(&SampleConfig::default(), &layer()?)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            sample::run(&mut cfg, &cli.out.unwrap_or_else(default_out))?;
        }
        Command::Experiment { name, d } => {
            experiment::run(name, d, cli.seed, &layer()?, &cli.out.unwrap_or_else(default_out))?;
        }
        Command::Check { inject_fault } => {
            let opts = CheckOptions {
                seed: cli.seed.unwrap_or(0),
                fault: inject_fault.map(|f| match f {
                    FaultArg::TraceTermSign => Fault::TraceTermSign,
                }),
            };
            let report = run_checks(&opts);
            print!("{}", report.table());
            if let Some(out) = &cli.out {
                output::ensure_dir(out)?;
                output::write_json(&out.join("check.json"), &report)?;
            }
            if !report.passed() {
                println!("self-check FAILED");
                return Ok(ExitCode::FAILURE);
            }
            println!("self-check passed");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
