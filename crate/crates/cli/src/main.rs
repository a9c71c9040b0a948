//! `papertrust` — drives the paper-PUF authentication simulator from config
//! files: surface population generation, PUF metric sweeps, attack
//! campaigns against the authentication system, and supply-chain scenario
//! runs. All outputs are deterministic under a fixed seed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

#[derive(Parser)]
#[command(name = "papertrust", version, about = "Paper-surface PUF authentication simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Config file (JSON, schema_version 1).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent cells; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a population of synthetic surfaces as norm-map containers.
    Gen(RunArgs),
    /// Evaluate robustness/uniqueness/uniformity/EER over a population.
    Metrics(RunArgs),
    /// Run the attack-versus-mitigation matrix.
    Attack(RunArgs),
    /// Run a supply-chain scenario and export its ledger and report.
    Scenario(RunArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("PAPERTRUST_LOG")).init();
    let cli = Cli::parse();

    type Runner = fn(&RunArgs) -> Result<(), CliError>;
    let (args, runner): (&RunArgs, Runner) = match &cli.command {
        Command::Gen(args) => (args, commands::run_gen),
        Command::Metrics(args) => (args, commands::run_metrics),
        Command::Attack(args) => (args, commands::run_attack),
        Command::Scenario(args) => (args, commands::run_scenario),
    };

    if let Some(workers) = args.workers {
        if workers == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }

    match runner(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
