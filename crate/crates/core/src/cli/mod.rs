//! `sarcam` command-line interface.
//!
//! Exit codes: 0 success, 2 invalid arguments, 3 bundle validation failure,
//! 4 compute or output failure, 5 saliency map identically zero. Every
//! failure prints one `ERROR:<code>: <message>` line to stderr first.

mod args;
mod commands;

use std::ffi::OsString;
use std::fmt;

use clap::error::ErrorKind;
use clap::Parser;

pub use args::{Cli, Command};

use crate::bundle::BundleError;
use crate::cam::CamError;
use crate::render::RenderError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BUNDLE: i32 = 3;
pub const EXIT_COMPUTE: i32 = 4;
pub const EXIT_ZERO_MAP: i32 = 5;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "SARCAM_THREADS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }

    pub fn compute(message: impl Into<String>) -> Self {
        Self::new(EXIT_COMPUTE, message)
    }

    /// Single line: `ERROR:<code>: <message>`.
    pub fn line(&self) -> String {
        format!("ERROR:{}: {}", self.code, self.message.replace('\n', " "))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl From<BundleError> for CliError {
    fn from(e: BundleError) -> Self {
        Self::new(EXIT_BUNDLE, e.to_string())
    }
}

impl From<CamError> for CliError {
    fn from(e: CamError) -> Self {
        match e {
            CamError::InvalidBundle(b) => b.into(),
            CamError::BadIntermediateSize { .. }
            | CamError::BadChannelIndex { .. }
            | CamError::EmptyChannelSubset => Self::usage(e.to_string()),
            CamError::ShapeMismatch(_) => Self::compute(e.to_string()),
        }
    }
}

impl From<RenderError> for CliError {
    fn from(e: RenderError) -> Self {
        Self::compute(e.to_string())
    }
}

fn configure_threads() {
    let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
    else {
        return;
    };
    // Fails only if a pool already exists, e.g. on repeated in-process runs.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    let summary = e.to_string();
                    let first = summary.lines().next().unwrap_or("invalid arguments");
                    let first = first.trim_start_matches("error: ");
                    eprintln!("{}", CliError::usage(first).line());
                    eprint!("{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    configure_threads();
    match commands::execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", e.line());
            e.code
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    run(std::env::args_os())
}
