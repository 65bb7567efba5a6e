//! Failure classes and their process exit codes.

use std::fmt;

/// A failed run, classified for the exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations (exit 1).
    Usage(String),
    /// Missing files, unreadable or malformed input, write failures (exit 2).
    Input(anyhow::Error),
    /// Degenerate or non-finite numbers during computation (exit 3).
    Numeric(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

/// The error and its causes joined by `: `, skipping a cause whose text
/// the previous message already ends with.
fn chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage: {msg}"),
            CliError::Input(e) => write!(f, "input: {}", chain(e)),
            CliError::Numeric(e) => write!(f, "numeric: {}", chain(e)),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Tags a fallible result with a failure class.
pub trait Classify<T> {
    fn input(self) -> CliResult<T>;
    fn numeric(self) -> CliResult<T>;
    fn input_with(self, context: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn input(self) -> CliResult<T> {
        self.map_err(|e| CliError::Input(e.into()))
    }

    fn numeric(self) -> CliResult<T> {
        self.map_err(|e| CliError::Numeric(e.into()))
    }

    fn input_with(self, context: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| CliError::Input(e.into().context(context())))
    }
}
