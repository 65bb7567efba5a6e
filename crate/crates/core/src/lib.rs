//! Non-neural machinery for an echocardiography image-text foundation model.
//!
//! * [`tokenizer`]: regex template tokenizer for structured reports, plus a
//!   byte-level BPE baseline and corpus compression statistics.
//! * [`embedding`] / [`store`]: unit-norm vectors with identity metadata,
//!   the `EMB1` binary format and cosine top-k search.
//! * [`zeroshot`]: prompt grids, zero-shot classification and regression
//!   with frame ensembling.
//! * [`retrieval`]: cross-modal ranks, recall@K and mean cross-modal
//!   retrieval rank.
//! * [`cohort`]: same-patient discrimination and procedure timelines.
//! * [`metrics`]: MAE, ROC AUC and seeded percentile bootstrap.
//! * [`encoder`]: a linear dual encoder trained with the symmetric
//!   contrastive loss under a warmup + cosine schedule.
//! * [`synth`]: deterministic synthetic studies for end-to-end checks.

pub mod cohort;
pub mod embedding;
pub mod encoder;
pub mod metrics;
pub mod report;
pub mod retrieval;
pub mod rng;
pub mod store;
pub mod synth;
pub mod tasks;
pub mod tokenizer;
pub mod zeroshot;

pub use embedding::{cosine_similarity, normalize, Embedding, EmbeddingError};
pub use metrics::MetricEstimate;
pub use report::EvalReport;
pub use store::{EmbeddingRecord, RecordKind, Store};
pub use tokenizer::{normalize_text, TemplateVocab, TokenSequence};
