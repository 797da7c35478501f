//! `loopfloer <command> [--config <path>] [--out <dir>] [--seed <int>]`
//!
//! Exit status: 0 on success or PASS, 1 on a computation error or FAIL
//! verdict, 2 on a configuration error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

use config::{Command, ExperimentConfig, ProfileSpec};
use output::Outputs;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: loopfloer::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "loopfloer", version, about = "Loop-space Morse homology and Floer cylinders on flat tori")]
struct Cli {
    command: Command,
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default out/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Torus dimension.
    #[arg(long)]
    n: Option<usize>,
    /// Winding class, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alpha: Option<Vec<i64>>,
    /// Radial profile JSON file.
    #[arg(long)]
    profile: Option<PathBuf>,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            if cfg.command != cli.command {
                return Err(CliError::Config(format!(
                    "configuration is for `{}`, invoked as `{}`",
                    cfg.command.name(),
                    cli.command.name()
                )));
            }
            cfg
        }
        None => ExperimentConfig::new(cli.command),
    };
    if let Some(alpha) = &cli.alpha {
        cfg.n = alpha.len();
        cfg.alpha = Some(alpha.clone());
    }
    if let Some(n) = cli.n {
        if cfg.alpha.as_ref().is_some_and(|a| a.len() != n) {
            return Err(CliError::Config(format!("--n {n} disagrees with the winding class")));
        }
        cfg.n = n;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if let Some(p) = &cli.profile {
        cfg.profile = Some(ProfileSpec::File(p.clone()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("LOOPFLOER_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| CliError::Config(format!("LOOPFLOER_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn execute(cli: &Cli) -> Result<bool, CliError> {
    configure_threads()?;
    let cfg = resolve(cli)?;
    let mut out = Outputs::create(cfg.out_dir())?;
    let result = commands::run(&cfg, &mut out);
    let status = match &result {
        Ok(true) => "pass",
        Ok(false) => "fail",
        Err(_) => "error",
    };
    out.finish(&cfg, status)?;
    result
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
