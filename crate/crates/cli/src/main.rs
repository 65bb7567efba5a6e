mod cli;
mod commands;
mod config;
mod corpus;
mod error;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;

use crate::cli::Cli;
use crate::error::{CliError, CliResult};

const THREADS_VAR: &str = "CARDIOLENS_THREADS";

fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| error::usage(format!("{THREADS_VAR} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| error::usage(e.to_string()))
}

fn run() -> CliResult<()> {
    init_threads()?;
    let args = config::expand(std::env::args().collect())?;
    let cli = match Cli::parse_args(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => {
            let _ = e.print();
            return Err(CliError::Usage(String::new()));
        }
    };
    commands::run(&cli)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(&e, CliError::Usage(m) if m.is_empty()) {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
