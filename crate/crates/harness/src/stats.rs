//! Per-time aggregation shared by evaluation summaries and plot data.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::Planner;
use crate::eval::MetricRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub planner: Planner,
    pub time_s: f64,
    pub trials: usize,
    pub uncertainty_mean: f64,
    pub uncertainty_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub runtime_mean: f64,
}

/// Mean and sample standard deviation (`n − 1`); the deviation of a single
/// value is zero.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One row per (planner, time), ordered by planner then time.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Planner, u64), Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.planner, r.time_s.to_bits())).or_default().push(r);
    }
    let mut out: Vec<SummaryRow> = groups
        .into_values()
        .map(|g| {
            let col = |f: fn(&MetricRow) -> f64| g.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (um, us) = mean_std(&col(|r| r.uncertainty_reduction_pct));
            let (rm, rs) = mean_std(&col(|r| r.rmse_reduction_pct));
            let (tm, _) = mean_std(&col(|r| r.decision_runtime_s));
            SummaryRow {
                planner: g[0].planner,
                time_s: g[0].time_s,
                trials: g.len(),
                uncertainty_mean: um,
                uncertainty_std: us,
                rmse_mean: rm,
                rmse_std: rs,
                runtime_mean: tm,
            }
        })
        .collect();
    out.sort_by(|a, b| a.planner.cmp(&b.planner).then(a.time_s.total_cmp(&b.time_s)));
    out
}
