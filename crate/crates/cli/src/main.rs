mod check;
mod commands;
mod config;
mod serve;

use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::config::FileConfig;

#[derive(Parser, Debug)]
#[command(name = "idec", version, about = "Integrative decoding over sampled responses")]
struct Cli {
    /// TOML file with defaults for any flag; explicit flags win.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,

    /// Cap on worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample K responses per question (JSONL of responses).
    Sample(commands::SampleArgs),
    /// Decode each question with one method (JSONL of results).
    Decode(commands::DecodeArgs),
    /// Self-consistency factuality score of a response.
    Score(commands::ScoreArgs),
    /// Accuracy over a k grid on a synthetic task.
    Sweep(commands::SweepArgs),
    /// Protocol-conformance probe of a logits server.
    ServeCheck(check::ServeCheckArgs),
    /// Serve a toy model over the logits protocol.
    ServeToy(serve::ServeToyArgs),
}

/// Failure category; decides the exit code and the `code` field of the
/// error JSON written to stderr.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Backend(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> (&'static str, u8) {
        match self {
            CliError::Usage(_) => ("usage", 2),
            CliError::Backend(_) => ("backend", 3),
            CliError::Io(_) => ("io", 1),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Backend(m) | CliError::Io(m) => m,
        }
    }
}

impl From<idec_core::Error> for CliError {
    fn from(e: idec_core::Error) -> Self {
        if e.is_backend() {
            CliError::Backend(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn fail(err: &CliError) -> ExitCode {
    let (code, exit) = err.code();
    let body = json!({"error": {"code": code, "message": err.message()}});
    let _ = writeln!(std::io::stderr(), "{body}");
    ExitCode::from(exit)
}

fn run(cli: Cli) -> CliResult {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(n) = cli.jobs.or(file.jobs) {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Sample(a) => commands::sample(a, &file, &mut out),
        Command::Decode(a) => commands::decode(a, &file, &mut out),
        Command::Score(a) => commands::score(a, &file, &mut out),
        Command::Sweep(a) => commands::sweep(a, &file, &mut out),
        Command::ServeCheck(a) => check::serve_check(a, &mut out),
        Command::ServeToy(a) => serve::serve_toy(a, &mut out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(e.render().to_string().trim_end().to_string())),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

/// Writes the effective configuration of a command to stderr.
pub fn echo_config<T: serde::Serialize>(command: &str, config: &T) -> CliResult {
    let line = json!({"command": command, "effective_config": config});
    writeln!(std::io::stderr(), "{line}")?;
    Ok(())
}
