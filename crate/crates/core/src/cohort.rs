//! Same-patient discrimination and pre/post-procedure similarity timelines.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use chrono::NaiveDate;
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::embedding::similarity_unchecked;
use crate::metrics::{auc_ci, mean_ci, BootstrapConfig, MetricError, MetricEstimate, Resampling};
use crate::rng::{derive_seed, seeded};
use crate::store::{EmbeddingRecord, RecordKind, Store};

pub const DEFAULT_WINDOW_DAYS: i64 = 200;

/// Rejection-sampling attempts per requested different-patient pair.
const DIFF_PATIENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum CohortError {
    #[error("no pairs available for relation {0}")]
    Unsatisfiable(&'static str),
    #[error("patient {patient:?} has no image acquisitions within {window} days of {event}")]
    EmptyWindow {
        patient: String,
        event: NaiveDate,
        window: i64,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    SameStudy,
    SamePatientDiffStudy,
    DiffPatient,
}

impl Relation {
    pub const ALL: [Relation; 3] = [
        Relation::SameStudy,
        Relation::SamePatientDiffStudy,
        Relation::DiffPatient,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::SameStudy => "same_study",
            Relation::SamePatientDiffStudy => "same_patient_diff_study",
            Relation::DiffPatient => "diff_patient",
        }
    }

    pub fn of(a: &EmbeddingRecord, b: &EmbeddingRecord) -> Relation {
        if a.meta.patient_id != b.meta.patient_id {
            Relation::DiffPatient
        } else if a.meta.study_id == b.meta.study_id {
            Relation::SameStudy
        } else {
            Relation::SamePatientDiffStudy
        }
    }

    pub fn same_patient(self) -> bool {
        self != Relation::DiffPatient
    }
}

/// Two image records and their cosine similarity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSample {
    pub id_a: String,
    pub id_b: String,
    pub patient_a: String,
    pub patient_b: String,
    pub relation: Relation,
    pub similarity: f32,
}

fn images_by_id(store: &Store) -> Vec<&EmbeddingRecord> {
    let mut images: Vec<&EmbeddingRecord> = store.of_kind(RecordKind::Image).collect();
    images.sort_by(|a, b| a.id().cmp(b.id()));
    images
}

/// Index pairs `(i, j)`, `i < j`, over `images` whose relation is `rel`;
/// only meaningful for the two same-patient relations.
fn enumerate_same_patient(images: &[&EmbeddingRecord], rel: Relation) -> Vec<(usize, usize)> {
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in images.iter().enumerate() {
        by_patient.entry(r.meta.patient_id.as_str()).or_default().push(i);
    }
    let mut out = Vec::new();
    for idx in by_patient.values() {
        for (x, &i) in idx.iter().enumerate() {
            for &j in &idx[x + 1..] {
                if Relation::of(images[i], images[j]) == rel {
                    out.push((i, j));
                }
            }
        }
    }
    out
}

/// Seeded random pairs, `n_per_relation` of each relation class.
///
/// Same-patient classes are drawn without replacement from all qualifying
/// pairs, falling back to with-replacement draws when fewer exist. Pairs of
/// different patients are found by rejection sampling without repeats.
pub fn sample_pairs(store: &Store, n_per_relation: usize, seed: u64) -> Result<Vec<PairSample>, CohortError> {
    let images = images_by_id(store);
    let make = |i: usize, j: usize| {
        let (a, b) = (images[i], images[j]);
        PairSample {
            id_a: a.id().to_string(),
            id_b: b.id().to_string(),
            patient_a: a.meta.patient_id.clone(),
            patient_b: b.meta.patient_id.clone(),
            relation: Relation::of(a, b),
            similarity: similarity_unchecked(&a.embedding, &b.embedding),
        }
    };
    let mut out = Vec::with_capacity(3 * n_per_relation);
    for rel in [Relation::SameStudy, Relation::SamePatientDiffStudy] {
        let pool = enumerate_same_patient(&images, rel);
        if pool.is_empty() {
            return Err(CohortError::Unsatisfiable(rel.as_str()));
        }
        let mut rng = seeded(derive_seed(seed, rel.as_str()));
        if pool.len() >= n_per_relation {
            let mut chosen = sample(&mut rng, pool.len(), n_per_relation).into_vec();
            chosen.sort_unstable();
            out.extend(chosen.into_iter().map(|k| make(pool[k].0, pool[k].1)));
        } else {
            out.extend((0..n_per_relation).map(|_| {
                let (i, j) = pool[rng.random_range(0..pool.len())];
                make(i, j)
            }));
        }
    }

    let patients: HashSet<&str> = images.iter().map(|r| r.meta.patient_id.as_str()).collect();
    if patients.len() < 2 {
        return Err(CohortError::Unsatisfiable(Relation::DiffPatient.as_str()));
    }
    let mut rng = seeded(derive_seed(seed, Relation::DiffPatient.as_str()));
    let mut seen = HashSet::new();
    let mut attempts = 0;
    let cap = DIFF_PATIENT_ATTEMPTS * n_per_relation.max(1);
    while seen.len() < n_per_relation {
        attempts += 1;
        if attempts > cap {
            return Err(CohortError::Unsatisfiable(Relation::DiffPatient.as_str()));
        }
        let i = rng.random_range(0..images.len());
        let j = rng.random_range(0..images.len());
        let (i, j) = (i.min(j), i.max(j));
        if images[i].meta.patient_id == images[j].meta.patient_id || !seen.insert((i, j)) {
            continue;
        }
        out.push(make(i, j));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationSummary {
    pub relation: Relation,
    pub n: usize,
    pub mean: MetricEstimate,
}

/// Mean similarity per relation class, with bootstrap intervals.
pub fn relation_summary(pairs: &[PairSample], cfg: &BootstrapConfig) -> Result<Vec<RelationSummary>, CohortError> {
    let mut out = Vec::new();
    for rel in Relation::ALL {
        let sims: Vec<f64> = pairs
            .iter()
            .filter(|p| p.relation == rel)
            .map(|p| p.similarity as f64)
            .collect();
        if sims.is_empty() {
            continue;
        }
        let mean = if sims.len() == 1 {
            MetricEstimate {
                value: sims[0],
                ci_low: sims[0],
                ci_high: sims[0],
                n_boot: 0,
                seed: cfg.seed,
            }
        } else {
            mean_ci(&sims, &BootstrapConfig::new(cfg.n_boot, cfg.seed))?
        };
        out.push(RelationSummary {
            relation: rel,
            n: sims.len(),
            mean,
        });
    }
    Ok(out)
}

/// AUC estimate with its class counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AucResult {
    pub n: usize,
    pub positives: usize,
    pub estimate: MetricEstimate,
}

fn counted_auc(scores: &[f64], labels: &[bool], cfg: &BootstrapConfig) -> Result<AucResult, CohortError> {
    let positives = labels.iter().filter(|&&l| l).count();
    Ok(AucResult {
        n: labels.len(),
        positives,
        estimate: auc_ci(scores, labels, cfg)?,
    })
}

/// Similarity as a same-patient score. Same-study pairs count as positives
/// unless `cross_study_only`, in which case they are dropped.
pub fn same_patient_auc(
    pairs: &[PairSample],
    cross_study_only: bool,
    cfg: &BootstrapConfig,
) -> Result<AucResult, CohortError> {
    let kept: Vec<&PairSample> = pairs
        .iter()
        .filter(|p| !(cross_study_only && p.relation == Relation::SameStudy))
        .collect();
    let scores: Vec<f64> = kept.iter().map(|p| p.similarity as f64).collect();
    let labels: Vec<bool> = kept.iter().map(|p| p.relation.same_patient()).collect();
    counted_auc(&scores, &labels, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelinePoint {
    pub id: String,
    pub day_offset: i64,
    pub similarity: f32,
    pub is_anchor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcedureTimeline {
    pub patient_id: String,
    pub event_date: NaiveDate,
    pub anchor_id: String,
    /// Sorted by offset, then id.
    pub points: Vec<TimelinePoint>,
}

/// Similarity of each in-window image of a patient to the anchor, the
/// earliest in-window acquisition (smallest id among same-day images).
pub fn procedure_timeline(
    store: &Store,
    patient_id: &str,
    event_date: NaiveDate,
    window_days: i64,
) -> Result<ProcedureTimeline, CohortError> {
    let offset = |r: &EmbeddingRecord| (r.meta.acquired - event_date).num_days();
    let mut in_window: Vec<&EmbeddingRecord> = store
        .of_patient(patient_id)
        .filter(|r| r.meta.kind == RecordKind::Image && offset(r).abs() <= window_days)
        .collect();
    in_window.sort_by(|a, b| offset(a).cmp(&offset(b)).then_with(|| a.id().cmp(b.id())));
    let Some(anchor) = in_window.first().copied() else {
        return Err(CohortError::EmptyWindow {
            patient: patient_id.to_string(),
            event: event_date,
            window: window_days,
        });
    };
    let points = in_window
        .iter()
        .map(|r| {
            let is_anchor = r.id() == anchor.id();
            TimelinePoint {
                id: r.id().to_string(),
                day_offset: offset(r),
                similarity: if is_anchor {
                    1.0
                } else {
                    similarity_unchecked(&anchor.embedding, &r.embedding)
                },
                is_anchor,
            }
        })
        .collect();
    Ok(ProcedureTimeline {
        patient_id: patient_id.to_string(),
        event_date,
        anchor_id: anchor.id().to_string(),
        points,
    })
}

/// Timelines for many `(patient, event date)` pairs, computed in parallel,
/// returned in input order.
pub fn procedure_timelines(
    store: &Store,
    events: &[(String, NaiveDate)],
    window_days: i64,
) -> Vec<Result<ProcedureTimeline, CohortError>> {
    events
        .par_iter()
        .map(|(p, d)| procedure_timeline(store, p, *d, window_days))
        .collect()
}

/// Pooled pre/post AUC: label post (offset ≥ 0), score 1 − similarity to
/// the anchor. Anchors are excluded. With `by_patient`, bootstrap
/// resamples whole patients.
pub fn pre_post_auc(
    timelines: &[ProcedureTimeline],
    cfg: &BootstrapConfig,
    by_patient: bool,
) -> Result<AucResult, CohortError> {
    let mut pooled: Vec<(&str, i64, &str, f32)> = timelines
        .iter()
        .flat_map(|t| {
            t.points
                .iter()
                .filter(|p| !p.is_anchor)
                .map(move |p| (t.patient_id.as_str(), p.day_offset, p.id.as_str(), p.similarity))
        })
        .collect();
    pooled.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    let scores: Vec<f64> = pooled.iter().map(|p| 1.0 - p.3 as f64).collect();
    let labels: Vec<bool> = pooled.iter().map(|p| p.1 >= 0).collect();
    let mut cfg = cfg.clone();
    cfg.resampling = if by_patient {
        Resampling::ByGroup(pooled.iter().map(|p| p.0.to_string()).collect())
    } else {
        Resampling::BySample
    };
    counted_auc(&scores, &labels, &cfg)
}

/// CSV with columns `patient_id,event_date,day_offset,similarity,is_anchor`.
pub fn write_timeline_csv<W: Write>(out: W, timelines: &[ProcedureTimeline]) -> Result<(), CohortError> {
    let csv_err = |e: csv::Error| CohortError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "event_date", "day_offset", "similarity", "is_anchor"])
        .map_err(csv_err)?;
    for t in timelines {
        for p in &t.points {
            w.write_record([
                t.patient_id.clone(),
                t.event_date.to_string(),
                p.day_offset.to_string(),
                p.similarity.to_string(),
                p.is_anchor.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| CohortError::Csv(e.to_string()))
}
