//! MAE, ROC AUC and seeded percentile bootstrap intervals.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::substream;

pub const DEFAULT_N_BOOT: usize = 1000;
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no samples")]
    Empty,
    #[error("only one class present ({positives} positives, {negatives} negatives)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("non-finite score or value")]
    NonFinite,
    #[error("bootstrap needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("bootstrap iterate {iterate}: {redraws} redraws were all degenerate")]
    RedrawCapExceeded { iterate: usize, redraws: usize },
    #[error("n_boot must be at least 1")]
    ZeroBoot,
}

impl MetricError {
    /// Whether a resample producing this error should be redrawn.
    fn is_degenerate(&self) -> bool {
        matches!(self, MetricError::SingleClass { .. } | MetricError::Empty)
    }
}

/// A point estimate with a 95% percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_boot: usize,
    pub seed: u64,
}

pub fn mae(predictions: &[f64], truths: &[f64]) -> Result<f64, MetricError> {
    if predictions.len() != truths.len() {
        return Err(MetricError::LengthMismatch(predictions.len(), truths.len()));
    }
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    let sum: f64 = predictions.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum();
    if !sum.is_finite() {
        return Err(MetricError::NonFinite);
    }
    Ok(sum / predictions.len() as f64)
}

/// ROC AUC in the Mann-Whitney form:
/// `(#concordant + 0.5 * #tied) / (n_pos * n_neg)`.
///
/// Counting is done in exact integer half-units after a sort, so the result
/// is bit-identical to the quadratic pair count.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricError::NonFinite);
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the Mann-Whitney U statistic.
    let mut twice_u: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut q) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        twice_u += 2 * p * negatives_below + p * q;
        negatives_below += q;
        i = j;
    }
    Ok(twice_u as f64 / (2 * positives as u128 * negatives as u128) as f64)
}

/// Percentile with linear interpolation between closest ranks
/// (`h = (n - 1) p`), on already sorted values.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// How resamples are drawn.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Resampling {
    /// Individual samples with replacement.
    #[default]
    BySample,
    /// Whole groups with replacement; `groups[i]` is the group of sample `i`.
    ByGroup(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub seed: u64,
    pub resampling: Resampling,
}

impl BootstrapConfig {
    pub fn new(n_boot: usize, seed: u64) -> Self {
        BootstrapConfig {
            n_boot,
            seed,
            resampling: Resampling::BySample,
        }
    }
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self::new(DEFAULT_N_BOOT, 0)
    }
}

/// Draws one resample of `0..n`. Iterate `b` uses substream `b` of the seed;
/// redraws continue on the same substream.
fn draw(rng: &mut crate::rng::Rng, n: usize, groups: Option<&[Vec<usize>]>) -> Vec<usize> {
    match groups {
        None => (0..n).map(|_| rng.random_range(0..n)).collect(),
        Some(groups) => {
            let mut idx = Vec::with_capacity(n);
            for _ in 0..groups.len() {
                idx.extend_from_slice(&groups[rng.random_range(0..groups.len())]);
            }
            idx
        }
    }
}

/// Percentile bootstrap of `metric`, evaluated on index resamples of
/// `0..n`. Degenerate resamples (single class, empty) are redrawn up to
/// [`MAX_REDRAWS`] times per iterate.
pub fn bootstrap_ci<F>(n: usize, metric: F, cfg: &BootstrapConfig) -> Result<MetricEstimate, MetricError>
where
    F: Fn(&[usize]) -> Result<f64, MetricError> + Sync,
{
    if n < 2 {
        return Err(MetricError::TooFewSamples(n));
    }
    if cfg.n_boot == 0 {
        return Err(MetricError::ZeroBoot);
    }
    let all: Vec<usize> = (0..n).collect();
    let value = metric(&all)?;

    let groups: Option<Vec<Vec<usize>>> = match &cfg.resampling {
        Resampling::BySample => None,
        Resampling::ByGroup(labels) => {
            if labels.len() != n {
                return Err(MetricError::LengthMismatch(labels.len(), n));
            }
            let mut by: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, g) in labels.iter().enumerate() {
                by.entry(g.as_str()).or_default().push(i);
            }
            Some(by.into_values().collect())
        }
    };

    let mut values: Vec<f64> = (0..cfg.n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(cfg.seed, b as u64);
            for _ in 0..=MAX_REDRAWS {
                let idx = draw(&mut rng, n, groups.as_deref());
                match metric(&idx) {
                    Ok(v) => return Ok(v),
                    Err(e) if e.is_degenerate() => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(MetricError::RedrawCapExceeded {
                iterate: b,
                redraws: MAX_REDRAWS,
            })
        })
        .collect::<Result<_, _>>()?;
    values.sort_by(f64::total_cmp);
    Ok(MetricEstimate {
        value,
        ci_low: percentile_sorted(&values, 0.025),
        ci_high: percentile_sorted(&values, 0.975),
        n_boot: cfg.n_boot,
        seed: cfg.seed,
    })
}

pub fn mae_ci(predictions: &[f64], truths: &[f64], cfg: &BootstrapConfig) -> Result<MetricEstimate, MetricError> {
    if predictions.len() != truths.len() {
        return Err(MetricError::LengthMismatch(predictions.len(), truths.len()));
    }
    bootstrap_ci(
        predictions.len(),
        |idx| {
            let p: Vec<f64> = idx.iter().map(|&i| predictions[i]).collect();
            let t: Vec<f64> = idx.iter().map(|&i| truths[i]).collect();
            mae(&p, &t)
        },
        cfg,
    )
}

pub fn auc_ci(scores: &[f64], labels: &[bool], cfg: &BootstrapConfig) -> Result<MetricEstimate, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    bootstrap_ci(
        scores.len(),
        |idx| {
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            roc_auc(&s, &l)
        },
        cfg,
    )
}

/// Mean with bootstrap interval.
pub fn mean_ci(values: &[f64], cfg: &BootstrapConfig) -> Result<MetricEstimate, MetricError> {
    bootstrap_ci(
        values.len(),
        |idx| {
            if idx.is_empty() {
                return Err(MetricError::Empty);
            }
            Ok(idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64)
        },
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, substream};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// O(n^2) pair count in half-units.
    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut twice, mut pairs) = (0u64, 0u64);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    pairs += 1;
                    if scores[i] > scores[j] {
                        twice += 2;
                    } else if scores[i] == scores[j] {
                        twice += 1;
                    }
                }
            }
        }
        twice as f64 / (2 * pairs) as f64
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[55.0, 65.0], &[50.0, 60.0]).unwrap(), 5.0);
        assert_eq!(mae(&[1.0], &[1.0, 2.0]), Err(MetricError::LengthMismatch(1, 2)));
        assert_eq!(mae(&[], &[]), Err(MetricError::Empty));
        let mut rng = seeded(5);
        let p: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..100.0)).collect();
        let t: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..100.0)).collect();
        let mut direct = 0.0;
        for i in 0..40 {
            direct += (p[i] - t[i]).abs();
        }
        assert_abs_diff_eq!(mae(&p, &t).unwrap(), direct / 40.0, epsilon = 1e-12);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(),
            1.0
        );
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(MetricError::SingleClass {
                positives: 2,
                negatives: 0
            })
        ));
        assert_eq!(roc_auc(&[f64::NAN, 0.0], &[true, false]), Err(MetricError::NonFinite));
    }

    #[test]
    fn auc_matches_brute_force_with_ties() {
        let mut rng = seeded(17);
        for _ in 0..30 {
            let n = rng.random_range(2..40);
            // Coarse scores so ties are common.
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 / 5.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            assert_eq!(roc_auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
        }
    }

    #[test]
    fn constant_metric_has_degenerate_interval() {
        let est = mae_ci(&[3.0; 10], &[1.0; 10], &BootstrapConfig::new(200, 1)).unwrap();
        assert_eq!((est.value, est.ci_low, est.ci_high), (2.0, 2.0, 2.0));
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let mut rng = seeded(2);
        let p: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..100.0)).collect();
        let t: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..100.0)).collect();
        let cfg = BootstrapConfig::new(300, 42);
        let a = mae_ci(&p, &t, &cfg).unwrap();
        let b = mae_ci(&p, &t, &cfg).unwrap();
        assert_eq!(a.ci_low.to_bits(), b.ci_low.to_bits());
        assert_eq!(a.ci_high.to_bits(), b.ci_high.to_bits());
        let c = mae_ci(&p, &t, &BootstrapConfig::new(300, 43)).unwrap();
        assert_ne!(a.ci_low, c.ci_low);
    }

    #[test]
    fn bootstrap_matches_sequential_reimplementation() {
        let mut rng = seeded(8);
        let truths: Vec<f64> = (0..50).map(|_| rng.random_range(10.0..80.0)).collect();
        let preds: Vec<f64> = truths.iter().map(|t| t + rng.random_range(-12.0..12.0)).collect();
        let est = mae_ci(&preds, &truths, &BootstrapConfig::new(1000, 99)).unwrap();

        // Independent sequential loop over the documented streams.
        let mut vals = Vec::new();
        for b in 0..1000u64 {
            let mut r = substream(99, b);
            let mut s = 0.0;
            for _ in 0..50 {
                let i = r.random_range(0..50usize);
                s += (preds[i] - truths[i]).abs();
            }
            vals.push(s / 50.0);
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo_h = 999.0 * 0.025;
        let hi_h = 999.0 * 0.975;
        let interp = |h: f64| {
            let f = h.floor() as usize;
            vals[f] + (h - f as f64) * (vals[f + 1] - vals[f])
        };
        assert_abs_diff_eq!(est.ci_low, interp(lo_h), epsilon = 1e-12);
        assert_abs_diff_eq!(est.ci_high, interp(hi_h), epsilon = 1e-12);
        assert!(est.ci_low <= est.value && est.value <= est.ci_high);
    }

    #[test]
    fn auc_bootstrap_redraws_single_class_resamples() {
        // One positive among 20: many resamples miss it and must be redrawn.
        let scores: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let mut labels = vec![false; 20];
        labels[19] = true;
        let est = auc_ci(&scores, &labels, &BootstrapConfig::new(200, 3)).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.ci_low, 1.0);
    }

    #[test]
    fn redraw_cap_is_reported() {
        let err = bootstrap_ci(
            5,
            |idx| {
                if idx.len() == 5 && idx.windows(2).all(|w| w[0] + 1 == w[1]) {
                    Ok(1.0)
                } else {
                    Err(MetricError::SingleClass {
                        positives: 0,
                        negatives: 5,
                    })
                }
            },
            &BootstrapConfig::new(3, 0),
        )
        .unwrap_err();
        assert!(matches!(err, MetricError::RedrawCapExceeded { redraws: 100, .. }));
        assert_eq!(
            bootstrap_ci(1, |_| Ok(0.0), &BootstrapConfig::default()).unwrap_err(),
            MetricError::TooFewSamples(1)
        );
    }

    #[test]
    fn group_resampling_keeps_groups_whole() {
        let values = [1.0, 1.0, 5.0, 5.0];
        let groups: Vec<String> = ["a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
        let cfg = BootstrapConfig {
            n_boot: 200,
            seed: 4,
            resampling: Resampling::ByGroup(groups),
        };
        let est = mean_ci(&values, &cfg).unwrap();
        // Only {a,a}, {a,b}, {b,b} group draws are possible: means 1, 3, 5.
        assert_eq!(est.ci_low, 1.0);
        assert_eq!(est.ci_high, 5.0);
    }

    proptest! {
        #[test]
        fn auc_label_flip_and_monotone_invariance(
            data in prop::collection::vec((-5i32..5, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let auc = roc_auc(&scores, &labels).unwrap();
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            prop_assert!((auc - (1.0 - roc_auc(&scores, &flipped).unwrap())).abs() < 1e-12);
            let warped: Vec<f64> = scores.iter().map(|s| (s * 0.3).exp() + 2.0).collect();
            prop_assert_eq!(auc, roc_auc(&warped, &labels).unwrap());
            prop_assert_eq!(auc, brute_auc(&scores, &labels));
        }

        #[test]
        fn mae_translation_covariant(
            pairs in prop::collection::vec((-100f64..100.0, -100f64..100.0), 1..30),
            shift in -1000f64..1000.0,
        ) {
            let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let t: Vec<f64> = pairs.iter().map(|x| x.1).collect();
            let ps: Vec<f64> = p.iter().map(|x| x + shift).collect();
            let ts: Vec<f64> = t.iter().map(|x| x + shift).collect();
            prop_assert!((mae(&p, &t).unwrap() - mae(&ps, &ts).unwrap()).abs() < 1e-9);
        }
    }
}
