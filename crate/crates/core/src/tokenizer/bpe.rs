//! Byte-level BPE baseline.
//!
//! Text is first split into word-like chunks (a letter run, a digit run or a
//! punctuation run, each carrying its leading space), then each chunk is
//! merged bottom-up from raw bytes. Ids `0..256` are the bytes themselves,
//! merged tokens follow in learned order and `bos`/`eos` come last.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{TokenId, TokenSequence, Tokenizer};

const BYTE_TOKENS: usize = 256;

#[derive(Debug, Error)]
pub enum BpeError {
    #[error("unknown token id {0}")]
    UnknownToken(TokenId),
    #[error("decoded bytes are not valid UTF-8")]
    Utf8,
    #[error("merge #{0} refers to a token that does not exist yet")]
    BadMerge(usize),
    #[error("bpe vocab is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn chunker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r" ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+").expect("chunk regex compiles"))
}

/// Word-like chunks whose concatenation is the input.
pub fn pretokenize(text: &str) -> impl Iterator<Item = &str> {
    chunker().find_iter(text).map(|m| m.as_str())
}

#[derive(Debug, Clone)]
pub struct BpeVocab {
    /// Learned merges in order; merge `i` produces token `256 + i`.
    merges: Vec<(TokenId, TokenId)>,
    /// Byte expansion of every non-special token.
    tokens: Vec<Vec<u8>>,
    ranks: HashMap<(TokenId, TokenId), usize>,
}

#[derive(Serialize, Deserialize)]
struct BpeDoc {
    merges: Vec<(TokenId, TokenId)>,
}

impl BpeVocab {
    fn from_merges(merges: Vec<(TokenId, TokenId)>) -> Result<Self, BpeError> {
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, &(a, b)) in merges.iter().enumerate() {
            let (Some(left), Some(right)) = (tokens.get(a as usize), tokens.get(b as usize)) else {
                return Err(BpeError::BadMerge(i));
            };
            let merged = [left.as_slice(), right.as_slice()].concat();
            tokens.push(merged);
            ranks.insert((a, b), i);
        }
        Ok(BpeVocab { merges, tokens, ranks })
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    /// Bytes of a regular (non-special) token.
    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn bos(&self) -> TokenId {
        self.tokens.len() as TokenId
    }

    pub fn eos(&self) -> TokenId {
        self.tokens.len() as TokenId + 1
    }

    /// Number of ids including `bos`/`eos`.
    pub fn len(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn encode_chunk(&self, chunk: &str, out: &mut Vec<TokenId>) {
        let mut symbols: Vec<TokenId> = chunk.bytes().map(TokenId::from).collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, w[0], w[1])))
                .min();
            let Some((rank, a, b)) = best else { break };
            let merged = (BYTE_TOKENS + rank) as TokenId;
            let mut next = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = next;
        }
        out.extend(symbols);
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(text.len() / 3);
        for chunk in pretokenize(text) {
            self.encode_chunk(chunk, &mut out);
        }
        out
    }

    /// Decodes content ids; `bos`/`eos` are skipped.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, BpeError> {
        let mut bytes = Vec::new();
        for &id in ids {
            if id == self.bos() || id == self.eos() {
                continue;
            }
            let t = self.token_bytes(id).ok_or(BpeError::UnknownToken(id))?;
            bytes.extend_from_slice(t);
        }
        String::from_utf8(bytes).map_err(|_| BpeError::Utf8)
    }

    pub fn tokenize_bpe(&self, text: &str, context_length: usize) -> TokenSequence {
        TokenSequence::wrap(&self.encode(text), self.bos(), self.eos(), context_length.max(3), 0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&BpeDoc {
            merges: self.merges.clone(),
        })
        .expect("merge list serializes")
    }

    pub fn from_json(document: &str) -> Result<Self, BpeError> {
        let doc: BpeDoc = serde_json::from_str(document)?;
        Self::from_merges(doc.merges)
    }
}

impl Tokenizer for BpeVocab {
    fn encode_content(&self, normalized: &str) -> Vec<TokenId> {
        self.encode(normalized)
    }

    fn tokenize(&self, normalized: &str, context_length: usize) -> TokenSequence {
        self.tokenize_bpe(normalized, context_length)
    }

    fn name(&self) -> &str {
        "bpe"
    }
}

/// Learns up to `merge_count` merges, each time merging the most frequent
/// adjacent pair. Ties go to the pair whose (left bytes, right bytes) sorts
/// first. Stops early when no pair is left.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], merge_count: usize) -> BpeVocab {
    let mut chunk_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for text in corpus {
        for chunk in pretokenize(text.as_ref()) {
            *chunk_counts.entry(chunk).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<TokenId>, usize)> = chunk_counts
        .into_iter()
        .map(|(c, n)| (c.bytes().map(TokenId::from).collect(), n))
        .collect();

    let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut merges = Vec::with_capacity(merge_count);
    for _ in 0..merge_count {
        let mut pair_counts: HashMap<(TokenId, TokenId), usize> = HashMap::new();
        for (symbols, n) in &words {
            for w in symbols.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_default() += n;
            }
        }
        let best = pair_counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&tokens[pa.0 as usize], &tokens[pa.1 as usize]);
                let kb = (&tokens[pb.0 as usize], &tokens[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some(((a, b), _)) = best else { break };
        let new_id = tokens.len() as TokenId;
        tokens.push([tokens[a as usize].as_slice(), tokens[b as usize].as_slice()].concat());
        merges.push((a, b));
        for (symbols, _) in words.iter_mut() {
            if symbols.len() < 2 {
                continue;
            }
            let mut next = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
                    next.push(new_id);
                    i += 2;
                } else {
                    next.push(symbols[i]);
                    i += 1;
                }
            }
            *symbols = next;
        }
    }
    BpeVocab::from_merges(merges).expect("trained merges reference earlier tokens")
}
