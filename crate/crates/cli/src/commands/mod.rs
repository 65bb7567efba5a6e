pub mod cohort;
pub mod gen;
pub mod import;
pub mod retrieval;
pub mod tokenize;
pub mod train;
pub mod vocab;
pub mod zeroshot;

use cardiolens::metrics::{BootstrapConfig, Resampling};

use crate::cli::{Cli, Command};
use crate::error::CliResult;
use crate::output::OutputDir;

pub fn run(cli: &Cli) -> CliResult<()> {
    let mut out = OutputDir::create(cli.command.out_dir())?;
    let seed = cli.global.seed;
    match &cli.command {
        Command::Tokenize(a) => tokenize::run(a, &mut out)?,
        Command::Vocab(a) => vocab::run(a, &mut out)?,
        Command::Gen(a) => gen::run(a, seed, &mut out)?,
        Command::Train(a) => train::run(a, seed, &mut out)?,
        Command::Import(a) => import::run(a, &mut out)?,
        Command::Zeroshot(a) => zeroshot::run(a, seed, &mut out)?,
        Command::Retrieval(a) => retrieval::run(a, &mut out)?,
        Command::Cohort(a) => cohort::run(a, seed, &mut out)?,
    }
    out.commit(cli)
}

/// Bootstrap settings, resampling by the given groups when asked.
fn bootstrap(n_boot: usize, seed: u64, groups: Option<Vec<String>>) -> BootstrapConfig {
    BootstrapConfig {
        n_boot,
        seed,
        resampling: groups.map_or(Resampling::BySample, Resampling::ByGroup),
    }
}

/// Escapes one CSV row.
fn csv_row<W: std::io::Write>(w: &mut csv::Writer<W>, fields: &[String]) -> CliResult<()> {
    use crate::error::Classify;
    w.write_record(fields).input()
}

fn csv_finish(w: csv::Writer<Vec<u8>>) -> CliResult<Vec<u8>> {
    use crate::error::Classify;
    w.into_inner().map_err(|e| anyhow::anyhow!("{e}")).input()
}
