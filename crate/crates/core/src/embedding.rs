use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Accepted deviation of a stored vector's norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("vector contains a non-finite value")]
    NonFinite,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("empty vector")]
    Empty,
}

/// A unit-norm embedding stored as 32-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Wraps a vector that is already unit-norm. Callers own the invariant.
    pub fn from_unit(v: Vec<f32>) -> Self {
        debug_assert!(is_unit(&v), "vector is not unit-norm");
        Embedding(v)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&x| x as f64).collect()
    }
}

/// Euclidean norm accumulated in f64.
pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

pub fn is_unit(v: &[f32]) -> bool {
    (l2_norm(v) - 1.0).abs() <= UNIT_NORM_TOLERANCE
}

pub fn normalize(v: &[f32]) -> Result<Embedding, EmbeddingError> {
    if v.is_empty() {
        return Err(EmbeddingError::Empty);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EmbeddingError::NonFinite);
    }
    let norm = l2_norm(v);
    if norm == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(Embedding(v.iter().map(|&x| (x as f64 / norm) as f32).collect()))
}

/// Normalizes an f64 vector into an f32 embedding.
pub fn normalize_f64(v: &[f64]) -> Result<Embedding, EmbeddingError> {
    if v.is_empty() {
        return Err(EmbeddingError::Empty);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EmbeddingError::NonFinite);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(Embedding(v.iter().map(|&x| (x / norm) as f32).collect()))
}

/// Dot product of raw slices in f64, without dimension checks.
#[inline]
pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Cosine similarity of two unit embeddings: the f64 dot product clamped
/// to [-1, 1] and rounded to f32.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f32, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(similarity_unchecked(a, b))
}

#[inline]
pub(crate) fn similarity_unchecked(a: &Embedding, b: &Embedding) -> f32 {
    dot_f64(&a.0, &b.0).clamp(-1.0, 1.0) as f32
}

/// Mean of several embeddings, renormalized.
pub fn mean_pool(embs: &[&Embedding]) -> Result<Embedding, EmbeddingError> {
    let first = embs.first().ok_or(EmbeddingError::Empty)?;
    let mut acc = vec![0f64; first.dim()];
    for e in embs {
        if e.dim() != acc.len() {
            return Err(EmbeddingError::DimensionMismatch(acc.len(), e.dim()));
        }
        for (a, &x) in acc.iter_mut().zip(e.as_slice()) {
            *a += x as f64;
        }
    }
    normalize_f64(&acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn normalize_three_four() {
        let e = normalize(&[3.0, 4.0]).unwrap();
        assert_eq!(e.as_slice(), &[0.6, 0.8]);
        let unit = normalize(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(normalize(unit.as_slice()).unwrap(), unit);
        assert_eq!(normalize(&[0.0, 0.0]), Err(EmbeddingError::ZeroVector));
        assert_eq!(normalize(&[f32::NAN]), Err(EmbeddingError::NonFinite));
    }

    #[test]
    fn cosine_examples() {
        let a = normalize(&[1.0, 0.0]).unwrap();
        let b = normalize(&[0.0, 1.0]).unwrap();
        assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
        let c = normalize(&[3.0, 4.0]).unwrap();
        let d = normalize(&[4.0, 3.0]).unwrap();
        assert_abs_diff_eq!(cosine_similarity(&c, &d).unwrap(), 0.96, epsilon = 1e-6);
        let e = normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(cosine_similarity(&a, &e), Err(EmbeddingError::DimensionMismatch(2, 3)));
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_bounded(
            a in prop::collection::vec(-10f32..10.0, 8),
            b in prop::collection::vec(-10f32..10.0, 8),
        ) {
            prop_assume!(l2_norm(&a) > 1e-3 && l2_norm(&b) > 1e-3);
            let (ea, eb) = (normalize(&a).unwrap(), normalize(&b).unwrap());
            prop_assert!(is_unit(ea.as_slice()));
            let ab = cosine_similarity(&ea, &eb).unwrap();
            prop_assert_eq!(ab, cosine_similarity(&eb, &ea).unwrap());
            prop_assert!(ab.abs() <= 1.0);
        }
    }
}
