//! Command-line front end: parses arguments, runs one experiment and writes
//! a self-describing JSON or CSV report.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 internal numeric
//! failure, 3 acceptance check failed (only with `--check`).

pub mod commands;
pub mod matrix_io;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use bilip_core::BilipError;
use commands::{execute, Command, Format};
use matrix_io::ReadMatrixError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "bilip", version, about = "Bi-Lipschitz analysis of ReLU layers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output encoding.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Output file (stdout when omitted).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; never changes any output value.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Exit with status 3 when the command's acceptance check fails.
    #[arg(long, global = true)]
    pub check: bool,
}

/// The resolved configuration recorded in every report; feeding it back via
/// `replay` reproduces the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub command: Command,
    pub format: Format,
    pub check: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] BilipError),
    #[error("{0}")]
    Matrix(#[from] ReadMatrixError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(BilipError::Numeric(_)) | CliError::Write { .. } => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        }
    }
}

fn load_replay(path: &std::path::Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let json = match text.lines().next().and_then(|l| l.strip_prefix("# config ")) {
        Some(line) => line.to_string(),
        None => text,
    };
    let value: serde_json::Value = serde_json::from_str(&json)
        .map_err(|e| CliError::Usage(format!("{}: not a report or config: {e}", path.display())))?;
    let config = value.get("config").cloned().unwrap_or(value);
    serde_json::from_value(config)
        .map_err(|e| CliError::Usage(format!("{}: invalid config block: {e}", path.display())))
}

/// Resolves the run config from parsed arguments.
pub fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    match &cli.command {
        Command::Replay(r) => {
            let mut cfg = load_replay(&r.config)?;
            if let Some(f) = cli.format {
                cfg.format = f;
            }
            cfg.check |= cli.check;
            Ok(cfg)
        }
        other => Ok(RunConfig {
            command: other.clone(),
            format: cli.format.unwrap_or(Format::Json),
            check: cli.check,
        }),
    }
}

/// Runs the resolved config and returns the encoded report and exit code.
pub fn render(cfg: &RunConfig) -> Result<(String, i32), CliError> {
    let start = Instant::now();
    let outcome = execute(&cfg.command)?;
    let runtime_ms = start.elapsed().as_millis() as u64;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let config = serde_json::to_value(cfg).expect("config serialises");
    let text = match cfg.format {
        Format::Json => report::to_json(&config, &outcome.records, runtime_ms),
        Format::Csv => report::to_csv(&config, &outcome.records),
    };
    let code = if cfg.check && !outcome.check_passed {
        eprintln!("check failed");
        EXIT_CHECK
    } else {
        EXIT_OK
    };
    Ok((text, code))
}

fn run_parsed(cli: Cli) -> Result<i32, CliError> {
    let cfg = resolve(&cli)?;
    let job = || render(&cfg);
    let (text, code) = match cli.workers {
        Some(0) => return Err(CliError::Usage("--workers must be at least 1".into())),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {w} workers: {e}")))?
            .install(job)?,
        None => job()?,
    };
    match &cli.out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Write {
            path: path.display().to_string(),
            source,
        })?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|()| out.flush())
                .map_err(|source| CliError::Write { path: "stdout".into(), source })?;
        }
    }
    Ok(code)
}

/// Entry point shared by the binary and the tests.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run_parsed(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
