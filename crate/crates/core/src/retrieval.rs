//! Cross-modal retrieval evaluation.
//!
//! The store is reduced to one image-text pair per report, then every image
//! queries all texts (and vice versa). The rank of the true partner is
//! 1-based; ties go to the candidate with the smaller id.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot_f64, mean_pool, Embedding, EmbeddingError};
use crate::report::EvalReport;
use crate::store::{EmbeddingRecord, RecordKind, Store};

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("no report has both an image and a text record")]
    NoPairs,
    #[error("true candidate {0:?} is not among the candidates")]
    MissingTrue(String),
    #[error("retrieval results come from different pair sets")]
    PairSetMismatch,
    #[error("mcmrr needs one image-to-text and one text-to-image result")]
    DirectionMismatch,
    #[error("recall cutoffs must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ImageToText,
    TextToImage,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::ImageToText => "image_to_text",
            Direction::TextToImage => "text_to_image",
        }
    }
}

/// Which image embedding represents a report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ImagePooling {
    /// The image record with the smallest id.
    #[default]
    MinId,
    /// Mean of the report's image records with `frame_index < n`, renormalized.
    MeanFirstFrames(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalPair {
    pub report_id: String,
    pub image_id: String,
    pub text_id: String,
    pub image: Embedding,
    pub text: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupResult {
    /// One pair per report, ascending report id.
    pub pairs: Vec<RetrievalPair>,
    /// Reports missing an image or a text record.
    pub excluded: usize,
}

pub fn dedup_pairs(store: &Store, pooling: ImagePooling) -> Result<DedupResult, RetrievalError> {
    let mut pairs = Vec::new();
    let mut excluded = 0;
    for (report_id, records) in store.reports() {
        let min_of = |kind: RecordKind| -> Option<&EmbeddingRecord> {
            records
                .iter()
                .copied()
                .filter(|r| r.meta.kind == kind)
                .min_by(|a, b| a.id().cmp(b.id()))
        };
        let (Some(image), Some(text)) = (min_of(RecordKind::Image), min_of(RecordKind::Text)) else {
            excluded += 1;
            continue;
        };
        let image_emb = match pooling {
            ImagePooling::MinId => image.embedding.clone(),
            ImagePooling::MeanFirstFrames(n) => {
                let frames: Vec<&Embedding> = records
                    .iter()
                    .filter(|r| r.meta.kind == RecordKind::Image && r.meta.frame_index.is_some_and(|f| f < n))
                    .map(|r| &r.embedding)
                    .collect();
                if frames.is_empty() {
                    image.embedding.clone()
                } else {
                    mean_pool(&frames)?
                }
            }
        };
        pairs.push(RetrievalPair {
            report_id: report_id.to_string(),
            image_id: image.id().to_string(),
            text_id: text.id().to_string(),
            image: image_emb,
            text: text.embedding.clone(),
        });
    }
    if pairs.is_empty() {
        return Err(RetrievalError::NoPairs);
    }
    Ok(DedupResult { pairs, excluded })
}

/// 1-based rank of `true_id` among `candidates` by similarity to `query`.
pub fn rank_of_match(
    query: &Embedding,
    true_id: &str,
    candidates: &[(&str, &Embedding)],
) -> Result<usize, RetrievalError> {
    let truth = candidates
        .iter()
        .find(|(id, _)| *id == true_id)
        .ok_or_else(|| RetrievalError::MissingTrue(true_id.to_string()))?;
    let sim = |e: &Embedding| dot_f64(query.as_slice(), e.as_slice()).clamp(-1.0, 1.0) as f32;
    let true_sim = sim(truth.1);
    let ahead = candidates
        .iter()
        .filter(|(id, e)| {
            let s = sim(e);
            s > true_sim || (s == true_sim && *id < true_id)
        })
        .count();
    Ok(ahead + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub direction: Direction,
    /// Rank per query, in pair order.
    pub ranks: Vec<usize>,
    pub mean_rank: f64,
    pub recall_at: BTreeMap<usize, f64>,
    #[serde(skip)]
    pair_set: u64,
}

impl RetrievalResult {
    pub fn n(&self) -> usize {
        self.ranks.len()
    }

    pub fn to_report(&self, mcmrr: Option<f64>) -> EvalReport {
        EvalReport {
            direction: Some(self.direction.as_str().to_string()),
            n: self.n(),
            mean_rank: Some(self.mean_rank),
            recall: self.recall_at.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            mcmrr,
            task: None,
            metric: None,
            value: None,
            ci_low: None,
            ci_high: None,
            n_boot: None,
            seed: None,
        }
    }
}

fn pair_set_fingerprint(pairs: &[RetrievalPair]) -> u64 {
    let mut h = DefaultHasher::new();
    for p in pairs {
        (&p.report_id, &p.image_id, &p.text_id).hash(&mut h);
    }
    h.finish()
}

/// Mean rank and recall@K from a list of 1-based ranks.
pub fn summarize_ranks(ranks: &[usize], ks: &[usize]) -> (f64, BTreeMap<usize, f64>) {
    let n = ranks.len() as f64;
    let mean = ranks.iter().map(|&r| r as f64).sum::<f64>() / n;
    let recall = ks
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    (mean, recall)
}

pub fn retrieval_metrics(
    pairs: &[RetrievalPair],
    direction: Direction,
    ks: &[usize],
) -> Result<RetrievalResult, RetrievalError> {
    if pairs.is_empty() {
        return Err(RetrievalError::NoPairs);
    }
    if ks.contains(&0) {
        return Err(RetrievalError::ZeroK);
    }
    let (queries, candidates): (Vec<&Embedding>, Vec<(&str, &Embedding)>) = match direction {
        Direction::ImageToText => (
            pairs.iter().map(|p| &p.image).collect(),
            pairs.iter().map(|p| (p.text_id.as_str(), &p.text)).collect(),
        ),
        Direction::TextToImage => (
            pairs.iter().map(|p| &p.text).collect(),
            pairs.iter().map(|p| (p.image_id.as_str(), &p.image)).collect(),
        ),
    };
    let ranks: Vec<usize> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| rank_of_match(q, candidates[i].0, &candidates))
        .collect::<Result<_, _>>()?;
    let (mean_rank, recall_at) = summarize_ranks(&ranks, ks);
    Ok(RetrievalResult {
        direction,
        ranks,
        mean_rank,
        recall_at,
        pair_set: pair_set_fingerprint(pairs),
    })
}

/// Mean cross-modal retrieval rank from the two directional means.
pub fn mcmrr_from_means(i2t_mean: f64, t2i_mean: f64) -> f64 {
    (i2t_mean + t2i_mean) / 2.0
}

pub fn mcmrr(i2t: &RetrievalResult, t2i: &RetrievalResult) -> Result<f64, RetrievalError> {
    if i2t.direction != Direction::ImageToText || t2i.direction != Direction::TextToImage {
        return Err(RetrievalError::DirectionMismatch);
    }
    if i2t.pair_set != t2i.pair_set || i2t.n() != t2i.n() {
        return Err(RetrievalError::PairSetMismatch);
    }
    Ok(mcmrr_from_means(i2t.mean_rank, t2i.mean_rank))
}

/// Both directions plus MCMRR, as two reports.
pub fn evaluate(pairs: &[RetrievalPair], ks: &[usize]) -> Result<[EvalReport; 2], RetrievalError> {
    let i2t = retrieval_metrics(pairs, Direction::ImageToText, ks)?;
    let t2i = retrieval_metrics(pairs, Direction::TextToImage, ks)?;
    let m = mcmrr(&i2t, &t2i)?;
    Ok([i2t.to_report(Some(m)), t2i.to_report(Some(m))])
}
