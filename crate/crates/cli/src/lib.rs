//! Experiment runner for the `adx` mechanism library.
//!
//! `adx <subcommand> --config <path> [--out <dir>] [--seed <u64>] [--threads <n>]`
//! reads a JSON config, runs one experiment and writes CSV tables plus a
//! `manifest.json` into the output directory.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::ExperimentConfig;

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "ADX_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn schema(path: &str, message: &str) -> Self {
        CliError::Schema {
            path: path.to_string(),
            message: message.to_string(),
        }
    }

    /// A library error raised while handling the config section at `path`.
    pub fn at(path: &str, e: adx::Error) -> Self {
        match e {
            adx::Error::NonConvergence { .. } => CliError::NonConvergence(format!("{path}: {e}")),
            adx::Error::Unsupported(_) | adx::Error::TooLarge(_) => {
                CliError::Unsupported(format!("{path}: {e}"))
            }
            adx::Error::Invalid { ref field, ref reason } => CliError::Schema {
                path: format!("{path}.{field}"),
                message: reason.clone(),
            },
            _ => CliError::Schema {
                path: path.to_string(),
                message: e.to_string(),
            },
        }
    }

    pub fn io(e: impl std::fmt::Display) -> Self {
        CliError::Io(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema { .. } => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Unsupported(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "adx", version, about = "Optimal data-sharing and ad-allocation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config and the environment.
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// RNG seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Interim curves and objective of a finite scoring mechanism.
    SolveFinite(CommonArgs),
    /// Classic benchmarks, the bundling example, or the case-region sweep.
    SolveStylized(CommonArgs),
    /// Ironing levels: general solve, Example-2 sweep, or the z_N sequence.
    SolveContinuum(CommonArgs),
    /// Three-market design, ARE sweep, or finite-N limits.
    LargeMarket(CommonArgs),
    /// Full verification report on a named mechanism.
    Verify(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SolveFinite(_) => "solve-finite",
            Command::SolveStylized(_) => "solve-stylized",
            Command::SolveContinuum(_) => "solve-continuum",
            Command::LargeMarket(_) => "large-market",
            Command::Verify(_) => "verify",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::SolveFinite(a)
            | Command::SolveStylized(a)
            | Command::SolveContinuum(a)
            | Command::LargeMarket(a)
            | Command::Verify(a) => a,
        }
    }
}

/// Outcome of a successful run.
#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// False when `verify` found violations.
    pub passed: bool,
}

/// Parse, validate, run and write artifacts.
pub fn run(cmd: &Command) -> Result<RunSummary, CliError> {
    let args = cmd.args();
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::schema("(file)", &format!("cannot read {}: {e}", args.config.display())))?;
    let cfg = ExperimentConfig::parse(&text)?;
    if let Some(c) = &cfg.command {
        if c != cmd.name() {
            return Err(CliError::schema(
                "command",
                &format!("config is for `{c}`, not `{}`", cmd.name()),
            ));
        }
    }
    let seed = args.seed.unwrap_or(cfg.seed);
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let work = || commands::execute(cmd.name(), &cfg, seed);
    let (artifacts, passed) = match args.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(CliError::io)?
            .install(work)?,
        None => work()?,
    };
    let files = output::write_all(&out_dir, cmd.name(), &text, seed, &artifacts)?;
    Ok(RunSummary {
        out_dir,
        files,
        passed,
    })
}

/// Process exit code for a run result.
pub fn exit_code(result: &Result<RunSummary, CliError>) -> i32 {
    match result {
        Ok(s) if s.passed => 0,
        Ok(_) => 1,
        Err(e) => e.exit_code(),
    }
}
