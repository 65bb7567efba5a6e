//! Regex template tokenizer.
//!
//! Each template owns one token and a regex that matches a whole report
//! sentence. Slots captured by the regex (a severity word, a number, a unit)
//! are emitted as extra tokens right after the template token, so
//! `"moderate left ventricular hypertrophy"` becomes
//! `[<_ left ventricular hypertrophy>, sev(moderate)]`.

use std::collections::{BTreeSet, HashMap};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{split_sentences, TokenId, TokenSequence, Tokenizer};

const STARTER_VOCAB: &str = include_str!("../../assets/starter_vocab.json");

/// Placeholder in a template's canonical sentence, filled by slots in order.
const CANONICAL_SLOT: char = '_';

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocab document is not valid JSON for the schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("unsupported vocab version {0}")]
    Version(u32),
    #[error("duplicate token id {0}")]
    DuplicateId(TokenId),
    #[error("token ids are not contiguous from 0: id {0} is missing")]
    NonContiguous(TokenId),
    #[error("template #{index} (id {id}): pattern does not compile: {source}")]
    Regex {
        index: usize,
        id: TokenId,
        #[source]
        source: regex::Error,
    },
    #[error("template #{index} (id {id}): {groups} capture groups but {slots} slots")]
    SlotMismatch {
        index: usize,
        id: TokenId,
        groups: usize,
        slots: usize,
    },
    #[error("template #{index} (id {id}): two adjacent number slots cannot be told apart")]
    AdjacentNumbers { index: usize, id: TokenId },
    #[error("template #{index} (id {id}): canonical text has {placeholders} placeholders but {slots} slots")]
    CanonicalMismatch {
        index: usize,
        id: TokenId,
        placeholders: usize,
        slots: usize,
    },
    #[error("severity list must contain {0:?}")]
    MissingSeverity(&'static str),
    #[error("digit token {0:?} is not one of 0-9 . -")]
    BadDigit(String),
    #[error("digit tokens must cover 0-9, '.' and '-'; missing {0:?}")]
    MissingDigit(char),
    #[error("unknown token id {0}")]
    UnknownToken(TokenId),
    #[error("malformed sequence at position {pos}: {reason}")]
    Malformed { pos: usize, reason: &'static str },
    #[error("context length must be at least 3, got {0}")]
    ContextLength(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Severity,
    Number,
    Unit,
}

/// One compiled template.
#[derive(Debug, Clone)]
pub struct TemplateEntry {
    pub id: TokenId,
    pub pattern: String,
    pub slots: Vec<SlotKind>,
    pub canonical: String,
    regex: Regex,
}

impl TemplateEntry {
    pub fn regex(&self) -> &Regex {
        &self.regex
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub unk: TokenId,
    pub bos: TokenId,
    pub eos: TokenId,
    pub pad: TokenId,
}

#[derive(Deserialize, Serialize)]
struct VocabDoc {
    version: u32,
    special: SpecialTokens,
    severity: Vec<SeverityDoc>,
    digits: Vec<DigitDoc>,
    units: Vec<UnitDoc>,
    templates: Vec<TemplateDoc>,
}

#[derive(Deserialize, Serialize)]
struct SeverityDoc {
    word: String,
    id: TokenId,
}

#[derive(Deserialize, Serialize)]
struct DigitDoc {
    ch: String,
    id: TokenId,
}

#[derive(Deserialize, Serialize)]
struct UnitDoc {
    text: String,
    id: TokenId,
}

#[derive(Deserialize, Serialize)]
struct TemplateDoc {
    id: TokenId,
    pattern: String,
    slots: Vec<SlotKind>,
    canonical: String,
}

/// What a token id stands for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Unk,
    Bos,
    Eos,
    Pad,
    Severity(usize),
    Digit(char),
    Unit(usize),
    Template(usize),
}

/// A loaded, validated template vocabulary. Immutable once built.
#[derive(Debug, Clone)]
pub struct TemplateVocab {
    pub version: u32,
    pub special: SpecialTokens,
    /// Severity words in declared order, with their token ids.
    pub severity: Vec<(String, TokenId)>,
    pub digits: Vec<(char, TokenId)>,
    pub units: Vec<(String, TokenId)>,
    /// Match-priority order.
    pub templates: Vec<TemplateEntry>,
    kinds: Vec<TokenKind>,
    severity_ids: HashMap<String, TokenId>,
    digit_ids: HashMap<char, TokenId>,
    unit_ids: HashMap<String, TokenId>,
}

impl TemplateVocab {
    /// Parses and validates a vocab document.
    pub fn from_json(document: &str) -> Result<Self, VocabError> {
        let doc: VocabDoc = serde_json::from_str(document)?;
        Self::from_doc(doc)
    }

    /// The vocabulary bundled with the crate.
    pub fn starter() -> Self {
        Self::from_json(STARTER_VOCAB).expect("bundled starter vocab is valid")
    }

    /// Source text of the bundled vocabulary.
    pub fn starter_json() -> &'static str {
        STARTER_VOCAB
    }

    fn from_doc(doc: VocabDoc) -> Result<Self, VocabError> {
        if doc.version != 1 {
            return Err(VocabError::Version(doc.version));
        }
        let mut assigned: HashMap<TokenId, TokenKind> = HashMap::new();
        let mut claim = |id: TokenId, kind: TokenKind| -> Result<(), VocabError> {
            if assigned.insert(id, kind).is_some() {
                return Err(VocabError::DuplicateId(id));
            }
            Ok(())
        };
        let sp = doc.special;
        claim(sp.unk, TokenKind::Unk)?;
        claim(sp.bos, TokenKind::Bos)?;
        claim(sp.eos, TokenKind::Eos)?;
        claim(sp.pad, TokenKind::Pad)?;

        let mut severity = Vec::with_capacity(doc.severity.len());
        for (i, s) in doc.severity.iter().enumerate() {
            claim(s.id, TokenKind::Severity(i))?;
            severity.push((s.word.to_lowercase(), s.id));
        }
        for required in ["mild", "moderate", "severe"] {
            if !severity.iter().any(|(w, _)| w == required) {
                return Err(VocabError::MissingSeverity(required));
            }
        }

        let mut digits = Vec::with_capacity(doc.digits.len());
        for d in &doc.digits {
            let mut chars = d.ch.chars();
            let ch = match (chars.next(), chars.next()) {
                (Some(c), None) if c.is_ascii_digit() || c == '.' || c == '-' => c,
                _ => return Err(VocabError::BadDigit(d.ch.clone())),
            };
            claim(d.id, TokenKind::Digit(ch))?;
            digits.push((ch, d.id));
        }
        for ch in "0123456789.-".chars() {
            if !digits.iter().any(|(c, _)| *c == ch) {
                return Err(VocabError::MissingDigit(ch));
            }
        }

        let mut units = Vec::with_capacity(doc.units.len());
        for (i, u) in doc.units.iter().enumerate() {
            claim(u.id, TokenKind::Unit(i))?;
            units.push((u.text.to_lowercase(), u.id));
        }

        let mut templates = Vec::with_capacity(doc.templates.len());
        for (index, t) in doc.templates.into_iter().enumerate() {
            claim(t.id, TokenKind::Template(index))?;
            let regex = Regex::new(&format!("(?i)^(?:{})$", t.pattern)).map_err(|source| VocabError::Regex {
                index,
                id: t.id,
                source,
            })?;
            let groups = regex.captures_len() - 1;
            if groups != t.slots.len() {
                return Err(VocabError::SlotMismatch {
                    index,
                    id: t.id,
                    groups,
                    slots: t.slots.len(),
                });
            }
            if t.slots
                .windows(2)
                .any(|w| w[0] == SlotKind::Number && w[1] == SlotKind::Number)
            {
                return Err(VocabError::AdjacentNumbers { index, id: t.id });
            }
            let placeholders = t.canonical.matches(CANONICAL_SLOT).count();
            if placeholders != t.slots.len() {
                return Err(VocabError::CanonicalMismatch {
                    index,
                    id: t.id,
                    placeholders,
                    slots: t.slots.len(),
                });
            }
            templates.push(TemplateEntry {
                id: t.id,
                pattern: t.pattern,
                slots: t.slots,
                canonical: t.canonical,
                regex,
            });
        }

        let n = assigned.len();
        let mut kinds = Vec::with_capacity(n);
        for id in 0..n as TokenId {
            match assigned.remove(&id) {
                Some(kind) => kinds.push(kind),
                None => return Err(VocabError::NonContiguous(id)),
            }
        }

        Ok(TemplateVocab {
            version: doc.version,
            special: sp,
            severity_ids: severity.iter().cloned().collect(),
            digit_ids: digits.iter().cloned().collect(),
            unit_ids: units.iter().cloned().collect(),
            severity,
            digits,
            units,
            templates,
            kinds,
        })
    }

    /// Serializes back to the vocab document schema.
    pub fn to_json(&self) -> String {
        let doc = VocabDoc {
            version: self.version,
            special: self.special,
            severity: self
                .severity
                .iter()
                .map(|(word, id)| SeverityDoc {
                    word: word.clone(),
                    id: *id,
                })
                .collect(),
            digits: self
                .digits
                .iter()
                .map(|(ch, id)| DigitDoc {
                    ch: ch.to_string(),
                    id: *id,
                })
                .collect(),
            units: self
                .units
                .iter()
                .map(|(text, id)| UnitDoc {
                    text: text.clone(),
                    id: *id,
                })
                .collect(),
            templates: self
                .templates
                .iter()
                .map(|t| TemplateDoc {
                    id: t.id,
                    pattern: t.pattern.clone(),
                    slots: t.slots.clone(),
                    canonical: t.canonical.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("vocab serializes")
    }

    /// Total number of token ids.
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, id: TokenId) -> Option<&TokenKind> {
        self.kinds.get(id as usize)
    }

    pub fn severity_id(&self, word: &str) -> Option<TokenId> {
        self.severity_ids.get(word).copied()
    }

    pub fn template_by_id(&self, id: TokenId) -> Option<&TemplateEntry> {
        match self.kind(id) {
            Some(TokenKind::Template(i)) => Some(&self.templates[*i]),
            _ => None,
        }
    }

    /// Tokens for one sentence: template token then its slots, or `None`
    /// when no template matches.
    pub fn match_sentence(&self, sentence: &str) -> Option<Vec<TokenId>> {
        self.templates.iter().find_map(|t| self.try_template(t, sentence))
    }

    fn try_template(&self, t: &TemplateEntry, sentence: &str) -> Option<Vec<TokenId>> {
        let caps = t.regex.captures(sentence)?;
        let mut out = vec![t.id];
        for (slot, group) in t.slots.iter().zip(caps.iter().skip(1)) {
            // A non-participating slot group means this template does not apply.
            let text = group?.as_str().to_lowercase();
            match slot {
                SlotKind::Severity => out.push(*self.severity_ids.get(&text)?),
                SlotKind::Unit => out.push(*self.unit_ids.get(&text)?),
                SlotKind::Number => {
                    if text.is_empty() {
                        return None;
                    }
                    for ch in text.chars() {
                        out.push(*self.digit_ids.get(&ch)?);
                    }
                }
            }
        }
        Some(out)
    }

    /// Untruncated content ids and the number of unmatched sentences.
    pub fn encode(&self, normalized: &str) -> (Vec<TokenId>, usize) {
        let mut ids = Vec::new();
        let mut unk = 0;
        for sentence in split_sentences(normalized) {
            match self.match_sentence(sentence) {
                Some(tokens) => ids.extend(tokens),
                None => {
                    ids.push(self.special.unk);
                    unk += 1;
                }
            }
        }
        (ids, unk)
    }

    /// Tokenizes normalized text into a `bos ... eos` sequence of at most
    /// `context_length` ids.
    pub fn tokenize_template(&self, normalized: &str, context_length: usize) -> Result<TokenSequence, VocabError> {
        if context_length < 3 {
            return Err(VocabError::ContextLength(context_length));
        }
        let (ids, unk) = self.encode(normalized);
        Ok(TokenSequence::wrap(
            &ids,
            self.special.bos,
            self.special.eos,
            context_length,
            unk,
        ))
    }

    /// Renders a sequence back to canonical sentences. A truncated
    /// sequence drops its final sentence, which may be incomplete.
    pub fn detokenize(&self, seq: &TokenSequence) -> Result<String, VocabError> {
        for &id in &seq.ids {
            if self.kind(id).is_none() {
                return Err(VocabError::UnknownToken(id));
            }
        }
        let mut ids = seq.ids.as_slice();
        if ids.first() == Some(&self.special.bos) {
            ids = &ids[1..];
        }
        if ids.last() == Some(&self.special.eos) {
            ids = &ids[..ids.len() - 1];
        }

        // (rendered text, is_template)
        let mut pieces: Vec<(String, bool)> = Vec::new();
        let mut pos = 0;
        while pos < ids.len() {
            let start = pos;
            match &self.kinds[ids[pos] as usize] {
                TokenKind::Unk => {
                    pieces.push(("[unk]".to_string(), false));
                    pos += 1;
                }
                TokenKind::Pad => pos += 1,
                TokenKind::Template(i) => {
                    pos += 1;
                    let t = &self.templates[*i];
                    match self.read_slots(t, ids, &mut pos) {
                        Ok(fills) => pieces.push((fill_canonical(&t.canonical, &fills), true)),
                        Err(_) if seq.truncated => break,
                        Err(reason) => return Err(VocabError::Malformed { pos: start, reason }),
                    }
                }
                _ => {
                    return Err(VocabError::Malformed {
                        pos,
                        reason: "slot token without a template",
                    })
                }
            }
        }

        if seq.truncated {
            // The final sentence may have lost slot tokens to truncation.
            pieces.pop();
        }
        let last_is_template = pieces.last().map(|p| p.1).unwrap_or(false);
        let mut text = pieces.into_iter().map(|p| p.0).collect::<Vec<_>>().join(". ");
        if last_is_template {
            text.push('.');
        }
        Ok(text)
    }

    fn read_slots(&self, t: &TemplateEntry, ids: &[TokenId], pos: &mut usize) -> Result<Vec<String>, &'static str> {
        let mut fills = Vec::with_capacity(t.slots.len());
        for slot in &t.slots {
            match slot {
                SlotKind::Severity => match ids.get(*pos).map(|&id| &self.kinds[id as usize]) {
                    Some(TokenKind::Severity(i)) => {
                        fills.push(self.severity[*i].0.clone());
                        *pos += 1;
                    }
                    _ => return Err("expected a severity token"),
                },
                SlotKind::Unit => match ids.get(*pos).map(|&id| &self.kinds[id as usize]) {
                    Some(TokenKind::Unit(i)) => {
                        fills.push(self.units[*i].0.clone());
                        *pos += 1;
                    }
                    _ => return Err("expected a unit token"),
                },
                SlotKind::Number => {
                    let mut number = String::new();
                    while let Some(TokenKind::Digit(ch)) = ids.get(*pos).map(|&id| &self.kinds[id as usize]) {
                        number.push(*ch);
                        *pos += 1;
                    }
                    if number.is_empty() {
                        return Err("expected digit tokens");
                    }
                    fills.push(number);
                }
            }
        }
        Ok(fills)
    }

    /// Ids of every template token, in priority order.
    pub fn template_ids(&self) -> BTreeSet<TokenId> {
        self.templates.iter().map(|t| t.id).collect()
    }
}

fn fill_canonical(canonical: &str, fills: &[String]) -> String {
    let mut out = String::with_capacity(canonical.len() + 8);
    let mut next = fills.iter();
    for ch in canonical.chars() {
        if ch == CANONICAL_SLOT {
            out.push_str(next.next().map(String::as_str).unwrap_or("_"));
        } else {
            out.push(ch);
        }
    }
    out
}

impl Tokenizer for TemplateVocab {
    fn encode_content(&self, normalized: &str) -> Vec<TokenId> {
        self.encode(normalized).0
    }

    fn tokenize(&self, normalized: &str, context_length: usize) -> TokenSequence {
        let (ids, unk) = self.encode(normalized);
        TokenSequence::wrap(&ids, self.special.bos, self.special.eos, context_length.max(3), unk)
    }

    fn name(&self) -> &str {
        "template"
    }
}
