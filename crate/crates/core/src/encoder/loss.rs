//! Symmetric contrastive (CLIP) loss with analytic gradients.

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("batch needs at least 2 pairs, got {0}")]
    BatchTooSmall(usize),
    #[error("image batch is {0:?} but text batch is {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("non-finite logits")]
    NonFinite,
}

/// Loss value and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipLoss {
    pub loss: f64,
    /// `∂loss/∂img`, `N × d`.
    pub d_img: Array2<f64>,
    /// `∂loss/∂txt`, `N × d`.
    pub d_txt: Array2<f64>,
    pub d_log_temp: f64,
}

/// Row-wise softmax of `logits`, with the max subtracted for stability.
fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Mean over rows of `-log softmax(row)[i]` at the diagonal.
fn diagonal_ce(logits: &Array2<f64>) -> f64 {
    let n = logits.nrows();
    let mut total = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[i];
    }
    total / n as f64
}

/// Logits `exp(log_temp) · img · txtᵀ`; the loss is the mean of the
/// image-to-text (row) and text-to-image (column) cross-entropies with
/// the diagonal as targets. Inputs are expected to be unit rows.
pub fn clip_loss(img: ArrayView2<f64>, txt: ArrayView2<f64>, log_temp: f64) -> Result<ClipLoss, LossError> {
    if img.dim() != txt.dim() {
        return Err(LossError::ShapeMismatch(img.dim(), txt.dim()));
    }
    let n = img.nrows();
    if n < 2 {
        return Err(LossError::BatchTooSmall(n));
    }
    let scale = log_temp.exp();
    let logits = img.dot(&txt.t()) * scale;
    if !scale.is_finite() || logits.iter().any(|v| !v.is_finite()) {
        return Err(LossError::NonFinite);
    }
    let logits_t = logits.t().to_owned();
    let loss = 0.5 * (diagonal_ce(&logits) + diagonal_ce(&logits_t));

    // ∂loss/∂logits = [(P_rows - I) + (P_cols - I)] / 2N.
    let eye = Array2::<f64>::eye(n);
    let p_rows = softmax_rows(&logits);
    let p_cols = softmax_rows(&logits_t).reversed_axes();
    let g = ((p_rows - &eye) + (p_cols - &eye)) / (2.0 * n as f64);

    let d_img = g.dot(&txt) * scale;
    let d_txt = g.t().dot(&img) * scale;
    let d_log_temp = (&g * &logits).sum();
    Ok(ClipLoss {
        loss,
        d_img,
        d_txt,
        d_log_temp,
    })
}
