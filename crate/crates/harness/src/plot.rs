use std::path::{Path, PathBuf};

use crate::eval::read_metrics;
use crate::stats::summarize;
use crate::Result;

/// Reads metric CSVs and writes `series_<planner>.csv` per planner into
/// `out_dir` with columns `time_s, uncertainty_mean, uncertainty_std,
/// rmse_mean, rmse_std`.
pub fn emit_plot_data(csvs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut rows = Vec::new();
    for path in csvs {
        rows.extend(read_metrics(path)?);
    }
    let summary = summarize(&rows);
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut planners: Vec<_> = summary.iter().map(|s| s.planner).collect();
    planners.dedup();
    for planner in planners {
        let path = out_dir.join(format!("series_{}.csv", planner.name()));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["time_s", "uncertainty_mean", "uncertainty_std", "rmse_mean", "rmse_std"])?;
        for s in summary.iter().filter(|s| s.planner == planner) {
            w.write_record([s.time_s, s.uncertainty_mean, s.uncertainty_std, s.rmse_mean, s.rmse_std].map(|x| x.to_string()))?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}
