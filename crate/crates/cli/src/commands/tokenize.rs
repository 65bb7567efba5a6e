use anyhow::anyhow;
use serde::Serialize;

use cardiolens::normalize_text;
use cardiolens::tokenizer::{corpus_stats, train_bpe, BpeVocab, CorpusStats, Tokenizer};

use crate::cli::{TokenizeArgs, TokenizerKind};
use crate::corpus::{load_vocab, read_reports, read_text};
use crate::error::{usage, Classify, CliError, CliResult};
use crate::output::OutputDir;

#[derive(Serialize)]
struct StatsFile {
    template: CorpusStats,
    bpe: CorpusStats,
    bpe_merges: usize,
    /// BPE mean tokens per report over template mean tokens per report.
    ratio: f64,
}

pub fn run(args: &TokenizeArgs, out: &mut OutputDir) -> CliResult<()> {
    if args.context_length < 3 {
        return Err(usage("--context-length must be at least 3"));
    }
    let vocab = load_vocab(args.vocab.as_deref())?;
    let reports: Vec<String> = read_reports(&args.input)?.iter().map(|r| normalize_text(r)).collect();
    if args.stats && reports.is_empty() {
        return Err(CliError::Input(anyhow!("empty corpus")));
    }
    let needs_bpe = args.stats || args.tokenizer == TokenizerKind::Bpe;
    let bpe = if !needs_bpe {
        None
    } else if let Some(path) = &args.bpe {
        Some(BpeVocab::from_json(&read_text(path)?).input_with(|| format!("loading {}", path.display()))?)
    } else {
        Some(train_bpe(&reports, args.merges))
    };

    let tokenizer: &dyn Tokenizer = match args.tokenizer {
        TokenizerKind::Template => &vocab,
        TokenizerKind::Bpe => bpe.as_ref().expect("built above"),
    };
    let mut lines = String::new();
    for r in &reports {
        let seq = tokenizer.tokenize(r, args.context_length);
        lines.push_str(&serde_json::to_string(&seq).input()?);
        lines.push('\n');
    }
    out.write("tokens.jsonl", lines)?;

    if args.stats {
        let bpe = bpe.as_ref().expect("built above");
        let template = corpus_stats(&reports, &vocab, Some(bpe)).input()?;
        let bpe_stats = corpus_stats(&reports, bpe, None).input()?;
        let ratio = template.compression_ratio_vs_reference.expect("reference given");
        out.write_json(
            "stats.json",
            &StatsFile {
                template,
                bpe: bpe_stats,
                bpe_merges: bpe.merges().len(),
                ratio,
            },
        )?;
    }
    Ok(())
}
