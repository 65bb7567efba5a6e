//! Seeded fixtures shared by the kernel benchmarks.

use cardiolens::rng::seeded;
use cardiolens::store::RecordMeta;
use cardiolens::synth::generate_corpus;
use cardiolens::{normalize_text, Embedding, EmbeddingRecord, RecordKind, Store};
use chrono::NaiveDate;
use ndarray::Array2;
use rand::Rng;

/// Normalized report texts from a synthetic corpus.
pub fn reports(patients: usize, seed: u64) -> Vec<String> {
    generate_corpus(patients, 2, seed, 0.3)
        .expect("valid corpus config")
        .iter()
        .map(|s| normalize_text(&s.report_text))
        .collect()
}

/// `n × d` matrix of unit rows.
pub fn unit_rows(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = seeded(seed);
    let mut m = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0f64));
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    m
}

/// Random unit vector.
pub fn unit_vector(d: usize, seed: u64) -> Embedding {
    let row = unit_rows(1, d, seed);
    Embedding::from_unit(row.iter().map(|&v| v as f32).collect())
}

/// Store of `n` image records with random unit vectors.
pub fn image_store(n: usize, d: usize, seed: u64) -> Store {
    let rows = unit_rows(n, d, seed);
    let day = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
    let mut store = Store::new(d);
    for (i, row) in rows.rows().into_iter().enumerate() {
        let meta = RecordMeta {
            id: format!("img{i:06}"),
            kind: RecordKind::Image,
            patient_id: format!("p{}", i / 4),
            study_id: format!("s{}", i / 2),
            report_id: format!("r{}", i / 2),
            acquired: day,
            frame_index: Some((i % 2) as u32),
        };
        let embedding = Embedding::from_unit(row.iter().map(|&v| v as f32).collect());
        store.insert(EmbeddingRecord { meta, embedding }).expect("unique ids");
    }
    store
}

/// Scores on a coarse grid, so ties are common, with noisy labels.
pub fn scores_and_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let score = (rng.random_range(0.0..1.0f64) * 50.0).round() / 50.0;
            (score, rng.random_bool(0.2 + 0.6 * score))
        })
        .unzip()
}
