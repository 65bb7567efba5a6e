use anyhow::anyhow;
use log::info;

use cardiolens::normalize_text;
use cardiolens::tokenizer::train_bpe;

use crate::cli::VocabArgs;
use crate::corpus::{load_vocab, read_reports};
use crate::error::{CliError, CliResult};
use crate::output::OutputDir;

pub fn run(args: &VocabArgs, out: &mut OutputDir) -> CliResult<()> {
    let vocab = load_vocab(args.template.as_deref())?;
    info!(
        "template vocabulary: {} tokens, {} templates",
        vocab.len(),
        vocab.templates.len()
    );
    out.write("vocab.json", vocab.to_json())?;
    if let Some(path) = &args.bpe_corpus {
        let reports: Vec<String> = read_reports(path)?.iter().map(|r| normalize_text(r)).collect();
        if reports.is_empty() {
            return Err(CliError::Input(anyhow!("empty corpus")));
        }
        let bpe = train_bpe(&reports, args.merges);
        info!(
            "BPE vocabulary: {} tokens after {} merges",
            bpe.len(),
            bpe.merges().len()
        );
        out.write("bpe.json", bpe.to_json())?;
    }
    Ok(())
}
