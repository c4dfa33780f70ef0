//! Downward-facing square camera: altitude-dependent noise and footprint.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::belief::MeasurementBatch;
use crate::groundtruth::GroundTruthField;
use crate::{GridSpec, IppError, Position, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    /// Noise variance asymptote.
    pub a: f64,
    /// Altitude decay rate, 1/m.
    pub b: f64,
    pub fov_half_angle_deg: f64,
    /// Above this altitude (m) the footprint side is scaled by `fov_scale_factor`.
    pub fov_scale_altitude: f64,
    pub fov_scale_factor: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { a: 0.2, b: 0.05, fov_half_angle_deg: 30.0, fov_scale_altitude: 15.0, fov_scale_factor: 1.0 }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.a > 0.0
            && self.b > 0.0
            && self.fov_half_angle_deg > 0.0
            && self.fov_half_angle_deg < 90.0
            && self.fov_scale_factor > 0.0
            && self.fov_scale_factor <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(IppError::Config(format!("invalid sensor config {self:?}")))
        }
    }

    /// Side length in meters of the square ground footprint at altitude `h`.
    pub fn footprint_side(&self, h: f64) -> f64 {
        let side = 2.0 * h * self.fov_half_angle_deg.to_radians().tan();
        if h > self.fov_scale_altitude {
            side * self.fov_scale_factor
        } else {
            side
        }
    }
}

/// `σ²(h) = a (1 − e^{−b h})`.
pub fn noise_variance(h: f64, cfg: &SensorConfig) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(IppError::Domain(format!("altitude {h} must be non-negative")));
    }
    Ok(cfg.a * -(-cfg.b * h).exp_m1())
}

/// Cells whose centers lie inside the footprint square centered below `pos`,
/// clipped to the map. Always contains the cell directly below.
pub fn footprint_cells(pos: Position, grid: &GridSpec, cfg: &SensorConfig) -> Result<Vec<usize>> {
    let [x, y, h] = pos;
    if !(h > 0.0) {
        return Err(IppError::Domain(format!("sensor altitude {h} must be positive")));
    }
    let below = grid
        .cell_at(x, y)
        .ok_or_else(|| IppError::Domain(format!("position ({x}, {y}) is outside the map")))?;
    let half = 0.5 * cfg.footprint_side(h);
    let r = grid.resolution;
    // centers sit at (i + 0.5) r; solve |(i + 0.5) r - x| <= half for i
    let range = |c: f64, n: usize| -> Option<(usize, usize)> {
        let lo = ((c - half) / r - 0.5).ceil().max(0.0);
        let hi = ((c + half) / r - 0.5).floor().min(n as f64 - 1.0);
        (lo <= hi).then_some((lo as usize, hi as usize))
    };
    let mut cells = Vec::new();
    if let (Some((x0, x1)), Some((y0, y1))) = (range(x, grid.width), range(y, grid.height)) {
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                cells.push(grid.index(cx, cy));
            }
        }
    }
    if !cells.contains(&below) {
        cells.push(below);
        cells.sort_unstable();
    }
    Ok(cells)
}

/// One reading per footprint cell, unclamped: `z = ζ + N(0, σ²(h))`.
pub fn take_measurement_raw<R: Rng + ?Sized>(
    pos: Position,
    truth: &GroundTruthField,
    cfg: &SensorConfig,
    rng: &mut R,
) -> Result<MeasurementBatch> {
    let cells = footprint_cells(pos, &truth.grid(), cfg)?;
    let var = noise_variance(pos[2], cfg)?;
    let sd = var.sqrt();
    let values = cells
        .iter()
        .map(|&c| {
            let eps: f64 = rng.sample(StandardNormal);
            truth.value(c) + sd * eps
        })
        .collect();
    let n = cells.len();
    Ok(MeasurementBatch { cell_indices: cells, values, variances: vec![var; n] })
}

/// As [`take_measurement_raw`] with readings clamped to `[0, 1]`; the
/// reported variance stays the unclamped Gaussian one.
pub fn take_measurement<R: Rng + ?Sized>(
    pos: Position,
    truth: &GroundTruthField,
    cfg: &SensorConfig,
    rng: &mut R,
) -> Result<MeasurementBatch> {
    let mut batch = take_measurement_raw(pos, truth, cfg, rng)?;
    for v in &mut batch.values {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(batch)
}
