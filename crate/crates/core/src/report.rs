//! Plot-ready JSON for every evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::MetricEstimate;

/// One evaluation result.
///
/// Retrieval results fill `direction`, `mean_rank`, `recall` and `mcmrr`;
/// scalar metrics (MAE, AUC, class means) fill `metric` and the interval
/// fields. `direction` and `mcmrr` are always written, as `null` when they
/// do not apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub direction: Option<String>,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_rank: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub recall: BTreeMap<String, f64>,
    pub mcmrr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub task: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metric: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ci_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ci_high: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_boot: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

impl EvalReport {
    pub fn for_metric(task: &str, metric: &str, n: usize, est: &MetricEstimate) -> Self {
        EvalReport {
            direction: None,
            n,
            mean_rank: None,
            recall: BTreeMap::new(),
            mcmrr: None,
            task: Some(task.to_string()),
            metric: Some(metric.to_string()),
            value: Some(est.value),
            ci_low: Some(est.ci_low),
            ci_high: Some(est.ci_high),
            n_boot: Some(est.n_boot),
            seed: Some(est.seed),
        }
    }
}
