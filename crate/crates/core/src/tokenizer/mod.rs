//! Report text tokenization.
//!
//! Two tokenizers share one [`TokenSequence`] output shape: the regex
//! [`template`] tokenizer that collapses whole report sentences into a
//! handful of tokens, and a byte-level [`bpe`] tokenizer trained on the
//! same corpus as the comparison baseline.

pub mod bpe;
pub mod stats;
pub mod template;

pub use bpe::{train_bpe, BpeVocab};
pub use stats::{corpus_stats, CorpusStats};
pub use template::{SlotKind, TemplateEntry, TemplateVocab, VocabError};

use serde::{Deserialize, Serialize};

/// Context length of the base model's text encoder.
pub const DEFAULT_CONTEXT_LENGTH: usize = 77;

/// A token id. Vocabularies are small, so 32 bits is plenty.
pub type TokenId = u32;

/// Output of either tokenizer: `bos`, content, `eos`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    /// True when content was cut to fit the context length.
    pub truncated: bool,
    /// Sentences that matched no template (template tokenizer only).
    #[serde(default)]
    pub unk_count: usize,
}

impl TokenSequence {
    /// Wraps content ids with `bos`/`eos`, truncating to `context_length`
    /// while keeping `eos` as the final id.
    pub(crate) fn wrap(
        content: &[TokenId],
        bos: TokenId,
        eos: TokenId,
        context_length: usize,
        unk_count: usize,
    ) -> Self {
        debug_assert!(context_length >= 3);
        let room = context_length - 2;
        let truncated = content.len() > room;
        let kept = &content[..content.len().min(room)];
        let mut ids = Vec::with_capacity(kept.len() + 2);
        ids.push(bos);
        ids.extend_from_slice(kept);
        ids.push(eos);
        TokenSequence {
            ids,
            truncated,
            unk_count,
        }
    }

    /// Ids between `bos` and `eos`.
    pub fn content(&self) -> &[TokenId] {
        match self.ids.len() {
            0 | 1 => &[],
            n => &self.ids[1..n - 1],
        }
    }
}

/// Common surface of the template and BPE tokenizers, used by corpus
/// statistics and the CLI.
pub trait Tokenizer {
    /// Untruncated content ids for already-normalized text (no `bos`/`eos`).
    fn encode_content(&self, normalized: &str) -> Vec<TokenId>;

    /// Full sequence for already-normalized text.
    fn tokenize(&self, normalized: &str, context_length: usize) -> TokenSequence;

    fn name(&self) -> &str;
}

/// Lowercases, turns line breaks into sentence boundaries and collapses
/// whitespace runs to a single space.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !out.is_empty() {
            if !out.ends_with('.') {
                out.push('.');
            }
            pending_space = true;
        }
        for ch in line.chars() {
            if ch.is_whitespace() {
                pending_space = true;
                continue;
            }
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(ch.to_lowercase());
        }
    }
    out
}

/// Splits normalized text into sentences at a `.` that ends the text or is
/// followed by a space. Decimal points such as `2.5` stay inside their
/// sentence. Returned sentences carry no terminal period.
pub fn split_sentences(normalized: &str) -> Vec<&str> {
    let bytes = normalized.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'.' && (i + 1 == bytes.len() || bytes[i + 1] == b' ') {
            push_sentence(&mut out, &normalized[start..i]);
            start = i + 1;
        }
    }
    push_sentence(&mut out, &normalized[start..]);
    out
}

fn push_sentence<'a>(out: &mut Vec<&'a str>, s: &'a str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("Moderate  LVH.\n"), "moderate lvh.");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("EF  is 60%"), "ef is 60%");
    }

    #[test]
    fn line_breaks_become_boundaries() {
        assert_eq!(normalize_text("Normal LV size\nMild MR"), "normal lv size. mild mr");
        assert_eq!(normalize_text("a.\n\n  b\t c"), "a. b c");
        assert_eq!(normalize_text("   \n \n"), "");
    }

    #[test]
    fn sentences_keep_decimals() {
        assert_eq!(
            split_sentences("aortic root is 3.4 cm. ef is 60%."),
            vec!["aortic root is 3.4 cm", "ef is 60%"]
        );
        assert!(split_sentences("").is_empty());
        assert_eq!(split_sentences("a. . b"), vec!["a", "b"]);
    }

    #[test]
    fn wrap_truncates_with_eos_last() {
        let seq = TokenSequence::wrap(&[5, 6, 7, 8], 1, 2, 4, 0);
        assert_eq!(seq.ids, vec![1, 5, 6, 2]);
        assert!(seq.truncated);
        assert_eq!(seq.content(), &[5, 6]);
        let seq = TokenSequence::wrap(&[], 1, 2, 3, 0);
        assert_eq!(seq.ids, vec![1, 2]);
        assert!(!seq.truncated);
    }
}
