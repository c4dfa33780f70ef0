use std::fmt::Write;

use ipp3d_core::groundtruth::{generate_field_sample, roi_mask};
use ipp3d_core::roadmap::build_roadmap_with;
use ipp3d_core::GridSpec;

use crate::config::ExperimentConfig;
use crate::Result;

/// Text picture of the field a trial would see: `#` marks hotspot cells,
/// `+` cells inside the true region of interest, `.` the rest. Row 0 is at
/// the bottom.
pub fn inspect_map(cfg: &ExperimentConfig, field_seed: u64) -> Result<String> {
    let n = cfg.map_size;
    let sample = generate_field_sample(n, n, cfg.resolution, field_seed, &cfg.field)?;
    let values = sample.field.values();
    let zeros = vec![0.0; values.len()];
    let roi = roi_mask(values, &zeros, &cfg.env.roi)?;
    let mut in_roi = vec![false; values.len()];
    for &i in &roi {
        in_roi[i] = true;
    }
    let roadmap = build_roadmap_with(GridSpec::new(n, n, cfg.resolution)?, &cfg.roadmap)?;
    let edges: usize = roadmap.edges.iter().map(Vec::len).sum();

    let mut out = String::new();
    writeln!(out, "map {n}x{n} at {} m, field seed {field_seed}", cfg.resolution).expect("string write");
    writeln!(
        out,
        "hotspot fraction {:.3}, region of interest {} of {} cells",
        sample.hotspot_fraction(),
        roi.len(),
        values.len()
    )
    .expect("string write");
    writeln!(out, "roadmap: {} nodes, {edges} directed edges, levels {:?}", roadmap.len(), roadmap.altitude_levels)
        .expect("string write");
    for row in (0..n).rev() {
        let line: String = (0..n)
            .map(|col| {
                let i = row * n + col;
                if sample.hotspot_mask[i] {
                    '#'
                } else if in_roi[i] {
                    '+'
                } else {
                    '.'
                }
            })
            .collect();
        writeln!(out, "{line}").expect("string write");
    }
    Ok(out)
}
