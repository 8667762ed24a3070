//! Command-line driver: configuration-driven experiment runs emitting CSV
//! tables, field dumps, and a manifest per run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gmsfem::config::RunConfig;
use gmsfem::driver::{Driver, Subcommand as Run};
use gmsfem::ErrorCategory;

#[derive(Parser)]
#[command(
    name = "gmsfem",
    about = "Mixed multiscale finite element solver for Darcy flow",
    version
)]
struct Cli {
    /// Path to the TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the configured one).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for per-edge parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Seed override for synthetic permeability fields.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the fine reference problem and dump its fields.
    Fine,
    /// Dof sweep of the offline space: one error-table row per basis count.
    Table,
    /// Per-edge eigenvalue report of the configured spectral problem.
    Eigens,
    /// Oversampling comparison cases 1-4 plus singular-value reports.
    Oversample,
    /// Single-phase flow and transport with saturation snapshots.
    Transport,
    /// Two-phase flow and transport, including SPE10-style fields.
    Twophase,
}

fn exit_code_for(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Numeric => 3,
        ErrorCategory::Io => 4,
    }
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, gmsfem::Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::from_toml("n = 40\nN = 4\n")?,
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;

    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| gmsfem::Error::Config(format!("cannot size thread pool: {e}")))?;
    }

    let sub = match cli.command {
        Command::Fine => Run::Fine,
        Command::Table => Run::Table,
        Command::Eigens => Run::Eigens,
        Command::Oversample => Run::Oversample,
        Command::Transport => Run::Transport,
        Command::Twophase => Run::TwoPhase,
    };
    let driver = Driver::new(config, cli.out.clone());
    driver.run(sub)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(err.category()))
        }
    }
}
