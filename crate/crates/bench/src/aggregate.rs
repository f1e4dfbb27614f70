use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use trsmpc::baselines::quantile_sorted;

use crate::emit::ExperimentRecord;
use crate::{BenchError, Result};

/// Median and quartiles over a cell's non-truncated episodes.
///
/// Quantiles interpolate linearly between order statistics. Statistics are
/// `None` when every episode of the cell was truncated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: Option<f64>,
    pub q25: Option<f64>,
    pub q75: Option<f64>,
    /// Episodes that entered the statistics.
    pub n: usize,
    /// Truncated episodes, excluded from the statistics.
    pub failures: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    CumCost,
    Smoothness,
    StepMs,
}

impl Metric {
    pub fn of(self, r: &ExperimentRecord) -> f64 {
        match self {
            Self::CumCost => r.cum_cost,
            Self::Smoothness => r.smoothness,
            Self::StepMs => r.step_ms_mean,
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            Self::CumCost => "summary",
            Self::Smoothness => "summary_smoothness",
            Self::StepMs => "summary_step_ms",
        }
    }
}

/// Linear-interpolation percentile, `q ∈ [0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(quantile_sorted(&sorted, q))
}

fn summarize(values: &[f64], failures: usize) -> Summary {
    Summary {
        median: percentile(values, 0.5),
        q25: percentile(values, 0.25),
        q75: percentile(values, 0.75),
        n: values.len(),
        failures,
    }
}

/// Per-cell summary of one metric.
pub fn aggregate_metric(
    records: &[ExperimentRecord],
    metric: Metric,
) -> Result<BTreeMap<String, Summary>> {
    let mut cells: BTreeMap<String, (Vec<f64>, usize, usize)> = BTreeMap::new();
    for r in records {
        let entry = cells.entry(r.cell_id.clone()).or_default();
        entry.2 += 1;
        if r.truncated {
            entry.1 += 1;
        } else {
            entry.0.push(metric.of(r));
        }
    }
    cells
        .into_iter()
        .map(|(id, (values, failures, total))| {
            if total == 0 {
                return Err(BenchError::EmptyCell(id));
            }
            Ok((id, summarize(&values, failures)))
        })
        .collect()
}

/// Per-cell summary of the cumulative cost.
pub fn aggregate(records: &[ExperimentRecord]) -> Result<BTreeMap<String, Summary>> {
    aggregate_metric(records, Metric::CumCost)
}
