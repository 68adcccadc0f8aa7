//! `confcurv run <config.toml>`: run one experiment and write its artifacts.

mod config;
mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<confcurv::Error> for CliError {
    fn from(e: confcurv::Error) -> Self {
        match e {
            confcurv::Error::Solver(m) => CliError::Solver(m),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "confcurv", version, about = "Conformal curvature experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML file.
    Run {
        config: PathBuf,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Halve the mesh spacing this many times.
        #[arg(long, default_value_t = 0)]
        refine: u32,
    },
}

fn run(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>, refine: u32) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&config).map_err(|e| CliError::Io(format!("{}: {e}", config.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if refine > 8 {
        return Err(CliError::Validation(format!("refine = {refine} is too large")));
    }
    let dir = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    cfg.out = None;
    let name = serde_json::to_value(cfg.experiment).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    let echo = serde_json::json!({ "run": &cfg, "refine": refine });

    let start = Instant::now();
    let artifacts = experiments::run(&cfg, refine)?;
    let hash = artifacts.write(&dir, &name, &echo)?;
    let status = artifacts.failure.as_deref().map_or("ok".to_string(), |f| format!("solver failure ({f})"));
    println!("{name}: {status} in {:.2}s, config {hash}, artifacts in {}", start.elapsed().as_secs_f64(), dir.display());
    match artifacts.failure {
        Some(f) => Err(CliError::Solver(f)),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed, refine } => run(config, out, seed, refine),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
