//! Reading the files other subcommands write.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::anyhow;
use chrono::NaiveDate;
use log::{info, warn};

use cardiolens::encoder::Checkpoint;
use cardiolens::store::blob::decode_blob;
use cardiolens::store::{import_embeddings, parse_manifest};
use cardiolens::synth::{embed_studies, ReportLine, SyntheticStudy};
use cardiolens::{Store, TemplateVocab};

use crate::cli::SourceArgs;
use crate::error::{usage, Classify, CliError, CliResult};

pub const REPORTS_FILE: &str = "reports.jsonl";
pub const FRAMES_MANIFEST: &str = "frames.jsonl";
pub const FRAMES_BLOB: &str = "frames.emb1";
pub const EVENTS_FILE: &str = "events.csv";
pub const CORPUS_CONFIG: &str = "corpus.json";

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).input_with(|| format!("reading {}", path.display()))
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).input_with(|| format!("reading {}", path.display()))
}

pub fn load_vocab(path: Option<&Path>) -> CliResult<TemplateVocab> {
    match path {
        None => Ok(TemplateVocab::starter()),
        Some(p) => {
            TemplateVocab::from_json(&read_text(p)?).input_with(|| format!("loading vocabulary {}", p.display()))
        }
    }
}

/// Report texts from a file of plain lines or JSON lines with a "text" field.
pub fn read_reports(path: &Path) -> CliResult<Vec<String>> {
    let mut out = Vec::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('{') {
            let v: serde_json::Value =
                serde_json::from_str(line).input_with(|| format!("{} line {}", path.display(), i + 1))?;
            let text = v
                .get("text")
                .and_then(|t| t.as_str())
                .ok_or_else(|| CliError::Input(anyhow!("{} line {}: no \"text\" field", path.display(), i + 1)))?;
            out.push(text.to_string());
        } else {
            out.push(line.to_string());
        }
    }
    Ok(out)
}

pub fn read_events(path: &Path) -> CliResult<Vec<(String, NaiveDate)>> {
    let mut reader = csv::Reader::from_path(path).input_with(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<(String, NaiveDate)>().enumerate() {
        out.push(row.input_with(|| format!("{} row {}", path.display(), i + 1))?);
    }
    Ok(out)
}

/// Rebuilds the studies of a corpus directory written by `gen`.
pub fn load_corpus(dir: &Path) -> CliResult<Vec<SyntheticStudy>> {
    let reports_path = dir.join(REPORTS_FILE);
    let mut reports = Vec::new();
    for (i, line) in read_text(&reports_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ReportLine =
            serde_json::from_str(line).input_with(|| format!("{} line {}", reports_path.display(), i + 1))?;
        reports.push(r);
    }
    if reports.is_empty() {
        return Err(CliError::Input(anyhow!("{} holds no reports", reports_path.display())));
    }

    let metas = parse_manifest(&read_text(&dir.join(FRAMES_MANIFEST))?).input()?;
    let (header, rows) = decode_blob(&read_bytes(&dir.join(FRAMES_BLOB))?).input()?;
    if header.count as usize != metas.len() {
        return Err(CliError::Input(anyhow!(
            "frame manifest lists {} records but the blob holds {}",
            metas.len(),
            header.count
        )));
    }
    let mut frames: BTreeMap<String, Vec<(u32, Vec<f64>)>> = BTreeMap::new();
    for (meta, row) in metas.into_iter().zip(rows) {
        let index = meta.frame_index.unwrap_or(0);
        frames
            .entry(meta.study_id)
            .or_default()
            .push((index, row.into_iter().map(f64::from).collect()));
    }

    let events_path = dir.join(EVENTS_FILE);
    let events: BTreeMap<String, NaiveDate> = if events_path.exists() {
        read_events(&events_path)?.into_iter().collect()
    } else {
        BTreeMap::new()
    };

    reports
        .into_iter()
        .map(|r| {
            let mut f = frames
                .remove(&r.study_id)
                .ok_or_else(|| CliError::Input(anyhow!("study {} has no frames", r.study_id)))?;
            f.sort_by_key(|(i, _)| *i);
            Ok(SyntheticStudy {
                event_date: events.get(&r.patient_id).copied(),
                patient_id: r.patient_id,
                study_id: r.study_id,
                report_id: r.report_id,
                acquired: r.acquired,
                latent: r.latent,
                report_text: r.text,
                frames: f.into_iter().map(|(_, v)| v).collect(),
            })
        })
        .collect()
}

pub fn load_checkpoint(dir: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(dir).input_with(|| format!("loading checkpoint {}", dir.display()))
}

/// Checks that a checkpoint fits the corpus features and the vocabulary.
pub fn check_compatible(ck: &Checkpoint, studies: &[SyntheticStudy], vocab: &TemplateVocab) -> CliResult<()> {
    let d_img = studies[0].frames[0].len();
    if ck.params.d_img() != d_img || ck.params.d_txt() != vocab.len() {
        return Err(CliError::Input(anyhow!(
            "checkpoint expects {} image features and {} text tokens; corpus has {} and vocabulary {}",
            ck.params.d_img(),
            ck.params.d_txt(),
            d_img,
            vocab.len()
        )));
    }
    Ok(())
}

/// The embedding store named by `source`, plus the corpus it came from
/// when it was embedded on the fly.
pub fn load_source(source: &SourceArgs) -> CliResult<(Store, Option<Vec<SyntheticStudy>>)> {
    match (&source.manifest, &source.blob, &source.corpus, &source.checkpoint) {
        (Some(manifest), Some(blob), None, None) => {
            let (store, report) = import_embeddings(&read_text(manifest)?, &read_bytes(blob)?).input()?;
            if !report.renormalized.is_empty() {
                warn!(
                    "{} vectors were not unit-norm and were normalized",
                    report.renormalized.len()
                );
            }
            info!("loaded {} records of dimension {}", report.count, report.dimension);
            Ok((store, None))
        }
        (None, None, Some(corpus), Some(checkpoint)) => {
            let vocab = load_vocab(source.vocab.as_deref())?;
            let studies = load_corpus(corpus)?;
            let ck = load_checkpoint(checkpoint)?;
            check_compatible(&ck, &studies, &vocab)?;
            if source.embed_frames == 0 {
                return Err(usage("--embed-frames must be at least 1"));
            }
            let store = embed_studies(&studies, &ck.params, &vocab, source.embed_frames).numeric()?;
            Ok((store, Some(studies)))
        }
        _ => Err(usage("give either --manifest and --blob, or --corpus and --checkpoint")),
    }
}
