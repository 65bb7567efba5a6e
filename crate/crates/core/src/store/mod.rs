//! In-memory embedding store with identity metadata.
//!
//! Persisted as a JSON Lines manifest (one object per record, in blob
//! order) next to an [`blob`] file holding the vectors.

pub mod blob;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{is_unit, normalize, similarity_unchecked, Embedding, EmbeddingError};
use blob::{decode_blob, encode_blob, BlobError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("record {id}: dimension {got}, store dimension is {expected}")]
    Dimension { id: String, got: usize, expected: usize },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record {0:?}: image records need a frame_index and text records must not have one")]
    FrameIndex(String),
    #[error("record {0:?}: embedding is not unit-norm")]
    NotUnit(String),
    #[error("manifest line {line}: {source}")]
    Manifest {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("blob holds {blob} vectors but manifest lists {manifest} records")]
    CountMismatch { blob: u64, manifest: usize },
    #[error(transparent)]
    Blob(#[from] BlobError),
    #[error("record {id:?}: {source}")]
    Vector {
        id: String,
        #[source]
        source: EmbeddingError,
    },
    #[error("no candidates to rank")]
    EmptyCandidates,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query dimension {0} does not match store dimension {1}")]
    QueryDimension(usize, usize),
    #[error("unknown record id {0:?}")]
    UnknownId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Image,
    Text,
}

/// Metadata of one record as it appears in the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: String,
    pub kind: RecordKind,
    pub patient_id: String,
    pub study_id: String,
    pub report_id: String,
    pub acquired: NaiveDate,
    pub frame_index: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub meta: RecordMeta,
    pub embedding: Embedding,
}

impl EmbeddingRecord {
    pub fn id(&self) -> &str {
        &self.meta.id
    }
}

/// Notes produced while importing.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub count: usize,
    pub dimension: usize,
    /// Ids whose vectors were not unit-norm and were normalized on load.
    pub renormalized: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Store {
    dimension: usize,
    records: Vec<EmbeddingRecord>,
    by_id: HashMap<String, usize>,
    by_kind: BTreeMap<RecordKind, Vec<usize>>,
    by_patient: BTreeMap<String, Vec<usize>>,
    by_study: BTreeMap<String, Vec<usize>>,
    by_report: BTreeMap<String, Vec<usize>>,
}

impl Store {
    pub fn new(dimension: usize) -> Self {
        Store {
            dimension,
            records: Vec::new(),
            by_id: HashMap::new(),
            by_kind: BTreeMap::new(),
            by_patient: BTreeMap::new(),
            by_study: BTreeMap::new(),
            by_report: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn insert(&mut self, record: EmbeddingRecord) -> Result<(), StoreError> {
        let meta = &record.meta;
        if record.embedding.dim() != self.dimension {
            return Err(StoreError::Dimension {
                id: meta.id.clone(),
                got: record.embedding.dim(),
                expected: self.dimension,
            });
        }
        if self.by_id.contains_key(&meta.id) {
            return Err(StoreError::DuplicateId(meta.id.clone()));
        }
        let frame_ok = match meta.kind {
            RecordKind::Image => meta.frame_index.is_some(),
            RecordKind::Text => meta.frame_index.is_none(),
        };
        if !frame_ok {
            return Err(StoreError::FrameIndex(meta.id.clone()));
        }
        if !is_unit(record.embedding.as_slice()) {
            return Err(StoreError::NotUnit(meta.id.clone()));
        }
        let idx = self.records.len();
        self.by_id.insert(meta.id.clone(), idx);
        self.by_kind.entry(meta.kind).or_default().push(idx);
        self.by_patient.entry(meta.patient_id.clone()).or_default().push(idx);
        self.by_study.entry(meta.study_id.clone()).or_default().push(idx);
        self.by_report.entry(meta.report_id.clone()).or_default().push(idx);
        self.records.push(record);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn of_kind(&self, kind: RecordKind) -> impl Iterator<Item = &EmbeddingRecord> {
        self.by_kind.get(&kind).into_iter().flatten().map(|&i| &self.records[i])
    }

    pub fn patients(&self) -> impl Iterator<Item = &str> {
        self.by_patient.keys().map(String::as_str)
    }

    pub fn of_patient(&self, patient_id: &str) -> impl Iterator<Item = &EmbeddingRecord> {
        self.by_patient
            .get(patient_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    pub fn of_study(&self, study_id: &str) -> impl Iterator<Item = &EmbeddingRecord> {
        self.by_study
            .get(study_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    /// Report ids with their records, in ascending report id order.
    pub fn reports(&self) -> impl Iterator<Item = (&str, Vec<&EmbeddingRecord>)> {
        self.by_report
            .iter()
            .map(|(k, v)| (k.as_str(), v.iter().map(|&i| &self.records[i]).collect()))
    }

    /// Manifest text and blob bytes, in insertion order.
    pub fn export(&self) -> (String, Vec<u8>) {
        let mut manifest = String::new();
        for r in &self.records {
            manifest.push_str(&serde_json::to_string(&r.meta).expect("metadata serializes"));
            manifest.push('\n');
        }
        let rows: Vec<&[f32]> = self.records.iter().map(|r| r.embedding.as_slice()).collect();
        let blob = encode_blob(self.dimension, &rows).expect("store rows share the dimension");
        (manifest, blob)
    }

    /// Cosine top-k over records of `kind` (all records when `None`).
    /// Descending similarity, ties by ascending id.
    pub fn top_k(
        &self,
        query: &Embedding,
        kind: Option<RecordKind>,
        k: usize,
    ) -> Result<Vec<(String, f32)>, StoreError> {
        if k == 0 {
            return Err(StoreError::ZeroK);
        }
        if query.dim() != self.dimension {
            return Err(StoreError::QueryDimension(query.dim(), self.dimension));
        }
        let candidates: Vec<&EmbeddingRecord> = match kind {
            Some(kind) => self.of_kind(kind).collect(),
            None => self.records.iter().collect(),
        };
        if candidates.is_empty() {
            return Err(StoreError::EmptyCandidates);
        }
        let mut scored: Vec<(&str, f32)> = candidates
            .par_iter()
            .map(|r| (r.id(), similarity_unchecked(query, &r.embedding)))
            .collect();
        scored.sort_by(|a, b| rank_order(a.1, a.0, b.1, b.0));
        scored.truncate(k);
        Ok(scored.into_iter().map(|(id, s)| (id.to_string(), s)).collect())
    }
}

/// Ranking order shared by search and retrieval: higher similarity first,
/// then ascending id.
pub fn rank_order(sim_a: f32, id_a: &str, sim_b: f32, id_b: &str) -> Ordering {
    sim_b.total_cmp(&sim_a).then_with(|| id_a.cmp(id_b))
}

/// Builds a store from a manifest and an `EMB1` blob. Vectors that are not
/// unit-norm are normalized and listed in the report.
pub fn import_embeddings(manifest: &str, blob: &[u8]) -> Result<(Store, LoadReport), StoreError> {
    let (header, rows) = decode_blob(blob)?;
    let metas = parse_manifest(manifest)?;
    if metas.len() as u64 != header.count {
        return Err(StoreError::CountMismatch {
            blob: header.count,
            manifest: metas.len(),
        });
    }
    let dimension = header.dimension as usize;
    let mut store = Store::new(dimension);
    let mut report = LoadReport {
        count: metas.len(),
        dimension,
        renormalized: Vec::new(),
    };
    for (meta, row) in metas.into_iter().zip(rows) {
        let embedding = if is_unit(&row) {
            Embedding::from_unit(row)
        } else {
            report.renormalized.push(meta.id.clone());
            normalize(&row).map_err(|source| StoreError::Vector {
                id: meta.id.clone(),
                source,
            })?
        };
        store.insert(EmbeddingRecord { meta, embedding })?;
    }
    Ok((store, report))
}

pub fn parse_manifest(manifest: &str) -> Result<Vec<RecordMeta>, StoreError> {
    manifest
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| StoreError::Manifest { line: i + 1, source }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn meta(id: &str, kind: RecordKind) -> RecordMeta {
        RecordMeta {
            id: id.to_string(),
            kind,
            patient_id: "p1".into(),
            study_id: "s1".into(),
            report_id: "r1".into(),
            acquired: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
            frame_index: (kind == RecordKind::Image).then_some(0),
        }
    }

    fn rec(id: &str, v: &[f32]) -> EmbeddingRecord {
        EmbeddingRecord {
            meta: meta(id, RecordKind::Text),
            embedding: normalize(v).unwrap(),
        }
    }

    #[test]
    fn insert_validates() {
        let mut s = Store::new(2);
        s.insert(rec("a", &[1.0, 0.0])).unwrap();
        assert!(matches!(
            s.insert(rec("a", &[0.0, 1.0])),
            Err(StoreError::DuplicateId(_))
        ));
        assert!(matches!(
            s.insert(rec("b", &[1.0, 0.0, 0.0])),
            Err(StoreError::Dimension { .. })
        ));
        let mut bad = rec("c", &[1.0, 0.0]);
        bad.meta.kind = RecordKind::Image;
        bad.meta.frame_index = None;
        assert!(matches!(s.insert(bad), Err(StoreError::FrameIndex(_))));
        assert_eq!(s.len(), 1);
        assert_eq!(s.of_kind(RecordKind::Text).count(), 1);
        assert_eq!(s.of_patient("p1").count(), 1);
    }

    #[test]
    fn top_k_examples() {
        let mut s = Store::new(3);
        s.insert(rec("x", &[1.0, 0.0, 0.0])).unwrap();
        s.insert(rec("y", &[0.0, 1.0, 0.0])).unwrap();
        s.insert(rec("z", &[0.0, 0.0, 1.0])).unwrap();
        let q = normalize(&[0.0, 1.0, 0.0]).unwrap();
        let top = s.top_k(&q, None, 1).unwrap();
        assert_eq!(top, vec![("y".to_string(), 1.0)]);
        let all = s.top_k(&q, Some(RecordKind::Text), 10).unwrap();
        let ids: Vec<&str> = all.iter().map(|(id, _)| id.as_str()).collect();
        // x and z tie at 0 and fall back to id order.
        assert_eq!(ids, vec!["y", "x", "z"]);
        assert!(matches!(s.top_k(&q, None, 0), Err(StoreError::ZeroK)));
        assert!(matches!(
            s.top_k(&q, Some(RecordKind::Image), 3),
            Err(StoreError::EmptyCandidates)
        ));
    }

    #[test]
    fn top_k_matches_exhaustive_sort() {
        let mut rng = seeded(11);
        let mut s = Store::new(6);
        let mut raw = Vec::new();
        for i in 0..20 {
            let v: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            s.insert(rec(&format!("r{i:02}"), &v)).unwrap();
            raw.push((format!("r{i:02}"), normalize(&v).unwrap()));
        }
        let qv: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q = normalize(&qv).unwrap();
        // Oracle: score each candidate independently, then bubble-sort.
        let mut oracle: Vec<(String, f32)> = raw
            .iter()
            .map(|(id, e)| {
                let dot: f64 = q
                    .as_slice()
                    .iter()
                    .zip(e.as_slice())
                    .map(|(a, b)| *a as f64 * *b as f64)
                    .sum();
                (id.clone(), dot.clamp(-1.0, 1.0) as f32)
            })
            .collect();
        for i in 0..oracle.len() {
            for j in 0..oracle.len() - 1 - i {
                let swap =
                    oracle[j].1 < oracle[j + 1].1 || (oracle[j].1 == oracle[j + 1].1 && oracle[j].0 > oracle[j + 1].0);
                if swap {
                    oracle.swap(j, j + 1);
                }
            }
        }
        assert_eq!(s.top_k(&q, None, 20).unwrap(), oracle);
        assert_eq!(s.top_k(&q, None, 5).unwrap(), oracle[..5].to_vec());
    }

    #[test]
    fn export_import_identity() {
        let mut s = Store::new(2);
        s.insert(rec("a", &[1.0, 2.0])).unwrap();
        let mut img = rec("b", &[-3.0, 0.5]);
        img.meta.kind = RecordKind::Image;
        img.meta.frame_index = Some(4);
        s.insert(img).unwrap();
        let (manifest, blob) = s.export();
        let (back, report) = import_embeddings(&manifest, &blob).unwrap();
        assert!(report.renormalized.is_empty());
        assert_eq!(back.records(), s.records());
    }

    #[test]
    fn import_errors_and_renormalization() {
        let rows = vec![vec![3.0f32, 4.0]; 3];
        let blob = encode_blob(2, &rows).unwrap();
        let two: String = ["a", "b"]
            .iter()
            .map(|id| serde_json::to_string(&meta(id, RecordKind::Text)).unwrap() + "\n")
            .collect();
        assert!(matches!(
            import_embeddings(&two, &blob),
            Err(StoreError::CountMismatch { blob: 3, manifest: 2 })
        ));
        let three = two.clone() + &serde_json::to_string(&meta("c", RecordKind::Text)).unwrap();
        let (s, report) = import_embeddings(&three, &blob).unwrap();
        assert_eq!(report.renormalized, vec!["a", "b", "c"]);
        assert_eq!(s.get("a").unwrap().embedding.as_slice(), &[0.6, 0.8]);
        assert!(matches!(
            import_embeddings("{not json", &blob),
            Err(StoreError::Manifest { line: 1, .. })
        ));
        let zero = encode_blob(2, &[[0.0f32, 0.0]]).unwrap();
        let one = serde_json::to_string(&meta("z", RecordKind::Text)).unwrap();
        assert!(matches!(import_embeddings(&one, &zero), Err(StoreError::Vector { .. })));
    }
}
