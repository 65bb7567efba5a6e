use log::warn;

use cardiolens::store::import_embeddings;

use crate::cli::ImportArgs;
use crate::corpus::{read_bytes, read_text};
use crate::error::{Classify, CliResult};
use crate::output::OutputDir;

pub fn run(args: &ImportArgs, out: &mut OutputDir) -> CliResult<()> {
    let (store, report) = import_embeddings(&read_text(&args.manifest)?, &read_bytes(&args.blob)?).input()?;
    if !report.renormalized.is_empty() {
        warn!(
            "{} vectors were not unit-norm and were normalized",
            report.renormalized.len()
        );
    }
    let (manifest, blob) = store.export();
    out.write("store.jsonl", manifest)?;
    out.write("store.emb1", blob)?;
    out.write_json("load_report.json", &report)?;
    Ok(())
}
