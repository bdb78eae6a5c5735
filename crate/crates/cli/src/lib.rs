//! Scenario runner behind the `snrlab` binary.
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 configuration or
//! usage error (nothing written), 3 numerical breakdown such as filter
//! weight collapse.

pub mod config;
pub mod report;
pub mod suite;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::config::ScenarioConfig;
use crate::report::Report;

/// Environment variable that overrides `outputs.directory`; `--out` wins over it.
pub const OUT_DIR_ENV: &str = "SNRLAB_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<snrlab_core::Error> for CliError {
    fn from(e: snrlab_core::Error) -> Self {
        use snrlab_core::Error as E;
        match e {
            E::WeightCollapse { .. }
            | E::NonFinite { .. }
            | E::PowerIterationDiverged(_)
            | E::SingularResolvent
            | E::NotQuasiNilpotent(_) => CliError::Numerical(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Per-path raw quantities on the λ-grid.
    Simulate,
    /// Identity checks: entropy estimators, conjugate identity, Malliavin layer, innovation, representation, roundtrip.
    Verify,
    /// λ-grid tables with closed-form oracles and finite-difference derivatives.
    Sweep,
    /// Merge earlier simulate / verify / sweep outputs into one summary.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "snrlab", version, about = "Entropy, estimation and invertibility experiments on Wiener space")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory; overrides the config and the environment.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

fn resolve(cli: &Cli) -> Result<ScenarioConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out {
        cfg.outputs.directory = dir.clone();
    } else if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
        cfg.outputs.directory = PathBuf::from(dir);
    }
    Ok(cfg)
}

/// Runs one subcommand; returns the written report.
pub fn execute(cli: &Cli) -> Result<Report, CliError> {
    let cfg = resolve(cli)?;
    let start = Instant::now();
    let report = match cli.command {
        Command::Simulate => suite::simulate(&cfg)?,
        Command::Verify => suite::verify(&cfg)?,
        Command::Sweep => suite::sweep(&cfg)?,
        Command::Report => suite::aggregate(&cfg)?,
    };
    let files = report.write(&cfg.outputs.directory, &cfg.outputs.formats)?;
    eprintln!(
        "{}: {} rows in {:.2?} -> {}",
        cli.command.name(),
        report.rows.len(),
        start.elapsed(),
        files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
    );
    Ok(report)
}

/// Parses `args`, runs, and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let run = || match execute(&cli) {
        Ok(report) => {
            for r in report.failures() {
                eprintln!("FAIL {} at λ={:?}: {} (oracle {:?})", r.quantity, r.lambda, r.estimate, r.oracle);
            }
            if report.all_pass() {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be positive");
            2
        }
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                eprintln!("error: {e}");
                2
            }
        },
        None => run(),
    }
}
