use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use spdelab::config::ExperimentConfig;
use spdelab::runner::{self, Command};
use spdelab::SpdeError;

#[derive(Parser)]
#[command(name = "spdelab", version, about = "Monte Carlo laboratory for colored-noise reaction-diffusion equations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Trajectory moments at the estimator times.
    Simulate(RunArgs),
    /// P(t)f at the estimator times.
    Semigroup(RunArgs),
    /// DP(t)f h by the gradient weight, with an optional finite-difference check.
    Gradient(RunArgs),
    /// u = R(λ)f and Du h with the quadrature error budget.
    Resolvent(RunArgs),
    /// Evolution value and gradient at the estimator times.
    Evolution(RunArgs),
    /// Exponent campaign described by the [campaign] block.
    Regularity(RunArgs),
    /// Predicted against measured exponents over an artifact directory.
    Report { dir: PathBuf },
    /// List every violated clause of a configuration.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn load(path: &Path, args: Option<&RunArgs>) -> Result<ExperimentConfig, SpdeError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(a) = args {
        if let Some(seed) = a.seed {
            cfg.seed = seed;
        }
        if let Some(p) = a.paths {
            cfg.estimator.paths = p;
        }
    }
    Ok(cfg)
}

fn execute(command: Command, args: &RunArgs) -> Result<(), SpdeError> {
    let cfg = load(&args.config, Some(args))?;
    let artifacts = runner::run_with_threads(command, &cfg, args.threads.max(1))?;
    runner::write_artifacts(&args.out_dir, &artifacts)?;
    if let Some(summary) = artifacts.iter().find(|a| a.name == "summary.md") {
        print!("{}", summary.contents);
    }
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<ExitCode, SpdeError> {
    let (command, args) = match cmd {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Semigroup(a) => (Command::Semigroup, a),
        Cmd::Gradient(a) => (Command::Gradient, a),
        Cmd::Resolvent(a) => (Command::Resolvent, a),
        Cmd::Evolution(a) => (Command::Evolution, a),
        Cmd::Regularity(a) => (Command::Regularity, a),
        Cmd::Report { dir } => {
            let table = runner::report(&dir)?;
            std::fs::write(dir.join("exponents.md"), &table)?;
            print!("{table}");
            return Ok(ExitCode::SUCCESS);
        }
        Cmd::Validate { config } => {
            let report = load(&config, None)?.validate();
            println!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
            return Ok(if report.is_ok() { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
    };
    execute(command, &args)?;
    Ok(ExitCode::SUCCESS)
}

fn kind(err: &SpdeError) -> &'static str {
    match err {
        SpdeError::Domain(_) => "domain",
        SpdeError::InvalidConfig(_) => "invalid_config",
        SpdeError::Dissipativity { .. } => "dissipativity",
        SpdeError::BlowUp { .. } => "blow_up",
        SpdeError::Budget(_) => "budget",
        SpdeError::Io(_) => "io",
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("{}", json!({ "error": kind(&err), "message": err.to_string() }));
            ExitCode::from(2)
        }
    }
}
