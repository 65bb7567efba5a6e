//! A linear dual encoder: image features and bag-of-token text counts are
//! each projected into a shared space and normalized, with a learnable
//! logit scale `exp(log_temp)`.

pub mod checkpoint;
pub mod loss;
pub mod schedule;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointError, CheckpointHeader};
pub use loss::{clip_loss, ClipLoss, LossError};
pub use schedule::{lr_schedule, Schedule, ScheduleError};
pub use train::{train, TrainConfig, TrainError, TrainExample, TrainOutcome, ValPoint};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::embedding::{normalize_f64, Embedding, EmbeddingError};
use crate::rng::seeded;
use crate::tokenizer::{TokenId, TokenSequence};

/// `ln(1 / 0.07)`, the usual CLIP starting temperature.
pub const INIT_LOG_TEMP: f64 = 2.659_260_036_932_778;
/// Upper clamp on `log_temp`: the logit scale never exceeds 100.
pub const MAX_LOG_TEMP: f64 = 4.605_170_185_988_092;

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("{what}: expected length {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("token id {0} is outside the text vocabulary of {1}")]
    TokenOutOfRange(TokenId, usize),
    #[error("text has no content tokens")]
    EmptyText,
    #[error("projection is degenerate: {0}")]
    Projection(#[from] EmbeddingError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Projection weights and temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    /// `d_img × d`.
    pub w_img: Array2<f64>,
    /// `d_txt × d`, one row per token id.
    pub w_txt: Array2<f64>,
    pub log_temp: f64,
}

/// Gradients with the same shapes as [`DualEncoder`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_img: Array2<f64>,
    pub w_txt: Array2<f64>,
    pub log_temp: f64,
}

impl DualEncoder {
    /// Gaussian weights with variance `1 / fan_in`, temperature at
    /// [`INIT_LOG_TEMP`].
    pub fn random(d_img: usize, d_txt: usize, d: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let mut draw = |rows: usize| {
            let normal = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("positive sd");
            Array2::from_shape_fn((rows, d), |_| normal.sample(&mut rng))
        };
        let w_img = draw(d_img);
        let w_txt = draw(d_txt);
        DualEncoder {
            w_img,
            w_txt,
            log_temp: INIT_LOG_TEMP,
        }
    }

    pub fn d_img(&self) -> usize {
        self.w_img.nrows()
    }

    pub fn d_txt(&self) -> usize {
        self.w_txt.nrows()
    }

    pub fn d(&self) -> usize {
        self.w_img.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.log_temp.is_finite()
            && self.w_img.iter().all(|x| x.is_finite())
            && self.w_txt.iter().all(|x| x.is_finite())
    }

    /// `normalize(features · W_img)`.
    pub fn encode_image(&self, features: &[f64]) -> Result<Embedding, EncoderError> {
        if features.len() != self.d_img() {
            return Err(EncoderError::Shape {
                what: "image features",
                expected: self.d_img(),
                got: features.len(),
            });
        }
        let x = Array1::from(features.to_vec());
        let u = x.dot(&self.w_img);
        Ok(normalize_f64(u.as_slice().expect("contiguous"))?)
    }

    /// Counts of the content tokens (`bos`/`eos` excluded), projected by
    /// `W_txt` and normalized.
    pub fn encode_text(&self, seq: &TokenSequence) -> Result<Embedding, EncoderError> {
        self.encode_tokens(seq.content())
    }

    pub fn encode_tokens(&self, content: &[TokenId]) -> Result<Embedding, EncoderError> {
        if content.is_empty() {
            return Err(EncoderError::EmptyText);
        }
        let counts = Array1::from(token_counts(content, self.d_txt())?);
        let u = counts.dot(&self.w_txt);
        Ok(normalize_f64(u.as_slice().expect("contiguous"))?)
    }

    /// Batch loss and parameter gradients for image features `x`
    /// (`N × d_img`) and token counts `counts` (`N × d_txt`), row `i` of
    /// each forming a matched pair.
    pub fn loss_and_grads(
        &self,
        x: ArrayView2<f64>,
        counts: ArrayView2<f64>,
    ) -> Result<(f64, Gradients), EncoderError> {
        if x.ncols() != self.d_img() {
            return Err(EncoderError::Shape {
                what: "image feature columns",
                expected: self.d_img(),
                got: x.ncols(),
            });
        }
        if counts.ncols() != self.d_txt() {
            return Err(EncoderError::Shape {
                what: "token count columns",
                expected: self.d_txt(),
                got: counts.ncols(),
            });
        }
        let u_img = x.dot(&self.w_img);
        let u_txt = counts.dot(&self.w_txt);
        let (e_img, n_img) = normalize_rows(&u_img)?;
        let (e_txt, n_txt) = normalize_rows(&u_txt)?;
        let out = clip_loss(e_img.view(), e_txt.view(), self.log_temp)?;
        let du_img = normalize_rows_backward(&e_img, &n_img, &out.d_img);
        let du_txt = normalize_rows_backward(&e_txt, &n_txt, &out.d_txt);
        Ok((
            out.loss,
            Gradients {
                w_img: x.t().dot(&du_img),
                w_txt: counts.t().dot(&du_txt),
                log_temp: out.d_log_temp,
            },
        ))
    }
}

/// Count vector of length `d_txt` for `content`.
pub fn token_counts(content: &[TokenId], d_txt: usize) -> Result<Vec<f64>, EncoderError> {
    let mut counts = vec![0.0; d_txt];
    for &id in content {
        let slot = counts
            .get_mut(id as usize)
            .ok_or(EncoderError::TokenOutOfRange(id, d_txt))?;
        *slot += 1.0;
    }
    Ok(counts)
}

/// Row-normalized copy and the row norms.
pub(crate) fn normalize_rows(u: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>), EncoderError> {
    let norms = u.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if norms.iter().any(|&n| n == 0.0) {
        return Err(EncoderError::Projection(EmbeddingError::ZeroVector));
    }
    if norms.iter().any(|n| !n.is_finite()) {
        return Err(EncoderError::Projection(EmbeddingError::NonFinite));
    }
    let e = u / &norms.view().insert_axis(Axis(1));
    Ok((e, norms))
}

/// Gradient through `e = u / |u|`, row-wise: `(de - e (e·de)) / |u|`.
pub(crate) fn normalize_rows_backward(e: &Array2<f64>, norms: &Array1<f64>, de: &Array2<f64>) -> Array2<f64> {
    let proj = (e * de).sum_axis(Axis(1)).insert_axis(Axis(1));
    (de - &(e * &proj)) / norms.view().insert_axis(Axis(1))
}
