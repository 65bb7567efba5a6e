use serde::Serialize;
use thiserror::Error;

use super::Tokenizer;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("empty corpus")]
    EmptyCorpus,
}

/// Token-count summary for one tokenizer over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub tokenizer: String,
    pub n: usize,
    pub mean_tokens: f64,
    /// Sample (n - 1) standard deviation; 0 for a single report.
    pub sd_tokens: f64,
    pub single_sample: bool,
    /// Reference mean divided by this tokenizer's mean, when a reference is given.
    pub compression_ratio_vs_reference: Option<f64>,
}

/// Mean and sample standard deviation of a list of lengths.
pub fn length_stats(lengths: &[usize]) -> Result<(f64, f64), StatsError> {
    if lengths.is_empty() {
        return Err(StatsError::EmptyCorpus);
    }
    let n = lengths.len() as f64;
    let mean = lengths.iter().map(|&l| l as f64).sum::<f64>() / n;
    if lengths.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

/// Untruncated content lengths (no `bos`/`eos`) of each normalized text.
pub fn token_lengths<S: AsRef<str>>(corpus: &[S], tokenizer: &dyn Tokenizer) -> Vec<usize> {
    corpus
        .iter()
        .map(|t| tokenizer.encode_content(t.as_ref()).len())
        .collect()
}

pub fn corpus_stats<S: AsRef<str>>(
    corpus: &[S],
    tokenizer: &dyn Tokenizer,
    reference: Option<&dyn Tokenizer>,
) -> Result<CorpusStats, StatsError> {
    let (mean, sd) = length_stats(&token_lengths(corpus, tokenizer))?;
    let ratio = match reference {
        Some(r) => {
            let (ref_mean, _) = length_stats(&token_lengths(corpus, r))?;
            Some(ref_mean / mean)
        }
        None => None,
    };
    Ok(CorpusStats {
        tokenizer: tokenizer.name().to_string(),
        n: corpus.len(),
        mean_tokens: mean,
        sd_tokens: sd,
        single_sample: corpus.len() == 1,
        compression_ratio_vs_reference: ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{train_bpe, TemplateVocab};
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_lengths() {
        let (mean, sd) = length_stats(&[10, 20]).unwrap();
        assert_eq!(mean, 15.0);
        assert_abs_diff_eq!(sd, 7.0711, epsilon = 1e-4);
    }

    #[test]
    fn single_and_empty() {
        assert_eq!(length_stats(&[7]).unwrap(), (7.0, 0.0));
        assert_eq!(length_stats(&[]), Err(StatsError::EmptyCorpus));
        let vocab = TemplateVocab::starter();
        let empty: [&str; 0] = [];
        assert_eq!(
            corpus_stats(&empty, &vocab, None).unwrap_err().to_string(),
            "empty corpus"
        );
        let s = corpus_stats(&["mild mitral regurgitation."], &vocab, None).unwrap();
        assert!(s.single_sample);
        assert_eq!(s.sd_tokens, 0.0);
        assert_eq!(s.mean_tokens, 2.0);
    }

    #[test]
    fn ratio_against_reference() {
        let corpus = ["moderate left ventricular hypertrophy. left ventricular ejection fraction is 60%."];
        let vocab = TemplateVocab::starter();
        let bpe = train_bpe(&corpus, 0);
        let s = corpus_stats(&corpus, &vocab, Some(&bpe)).unwrap();
        // 5 template ids against one byte per character.
        assert_eq!(s.mean_tokens, 5.0);
        assert_eq!(s.compression_ratio_vs_reference, Some(corpus[0].len() as f64 / 5.0));
    }
}
