//! Command-line front end: training, evaluation, prediction, gradient checks
//! and knowledge retrieval over a single run configuration file.
//!
//! Every command writes to a caller-supplied sink, so the binary and the
//! tests drive the same code.

pub mod args;
pub mod commands;
pub mod config;

use std::io::Write;

use clap::Parser;

pub use args::{Cli, Command};
pub use config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_GRADCHECK: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(#[source] ketm::Error),

    #[error("gradient check failed for: {}", .0.join(", "))]
    GradCheck(Vec<String>),

    #[error("output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Data(_) | CliError::Output(_) => EXIT_DATA,
            CliError::GradCheck(_) => EXIT_GRADCHECK,
        }
    }
}

impl From<ketm::Error> for CliError {
    fn from(e: ketm::Error) -> Self {
        match e {
            ketm::Error::Config(msg) => CliError::Config(msg),
            ketm::Error::Argument(msg) => CliError::Usage(msg),
            other => CliError::Data(other),
        }
    }
}

/// Parses `argv` and runs the command. Returns the process exit code;
/// diagnostics go to `err`.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
