//! Hidden occupancy fields, regions of interest and reconstruction error.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{GridSpec, IppError, Result};

/// The hidden per-cell field the agent reconstructs. Values are in `[0, 1]`;
/// generated fields are binary occupancy draws.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl GroundTruthField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(IppError::Dimension(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.width,
                grid.height
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(IppError::Domain(format!("field value {v} outside [0, 1]")));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn resolution(&self) -> f64 {
        self.grid.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, index: usize) -> f64 {
        self.values[index]
    }

    /// Plain-text grid: a `w h r` header line, then one line per row.
    pub fn to_text(&self) -> String {
        write_grid_text(self.grid, &self.values)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (grid, values) = parse_grid_text(text)?;
        Self::new(grid, values)
    }
}

pub(crate) fn write_grid_text(grid: GridSpec, values: &[f64]) -> String {
    let mut out = format!("{} {} {}\n", grid.width, grid.height, grid.resolution);
    for row in values.chunks(grid.width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub(crate) fn parse_grid_text(text: &str) -> Result<(GridSpec, Vec<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| IppError::Format("empty grid file".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(IppError::Format(format!("bad header {header:?}, expected \"w h r\"")));
    }
    let bad = |s: &str| IppError::Format(format!("bad header field {s:?}"));
    let width: usize = parts[0].parse().map_err(|_| bad(parts[0]))?;
    let height: usize = parts[1].parse().map_err(|_| bad(parts[1]))?;
    let resolution: f64 = parts[2].parse().map_err(|_| bad(parts[2]))?;
    let grid = GridSpec::new(width, height, resolution)?;
    let mut values = Vec::with_capacity(grid.len());
    for (row, line) in lines.enumerate() {
        let before = values.len();
        for tok in line.split_whitespace() {
            values.push(
                tok.parse::<f64>()
                    .map_err(|_| IppError::Format(format!("bad value {tok:?} on row {row}")))?,
            );
        }
        if values.len() - before != width {
            return Err(IppError::Format(format!(
                "row {row} has {} values, expected {width}",
                values.len() - before
            )));
        }
    }
    if values.len() != grid.len() {
        return Err(IppError::Format(format!("{} values, expected {}", values.len(), grid.len())));
    }
    Ok((grid, values))
}

/// Parameters of the random hotspot field generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldGenConfig {
    /// Occupancy probability inside hotspots.
    pub p_high: f64,
    /// Occupancy probability in the background.
    pub p_low: f64,
    pub min_hotspots: usize,
    pub max_hotspots: usize,
    /// Ellipse semi-axis range as a fraction of the map side (in cells).
    pub min_radius_frac: f64,
    pub max_radius_frac: f64,
}

impl Default for FieldGenConfig {
    fn default() -> Self {
        Self {
            p_high: 0.8,
            p_low: 0.1,
            min_hotspots: 2,
            max_hotspots: 5,
            min_radius_frac: 0.1,
            max_radius_frac: 0.25,
        }
    }
}

impl FieldGenConfig {
    fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p_high) || !prob(self.p_low) {
            return Err(IppError::Config("hotspot probabilities must lie in [0, 1]".into()));
        }
        if self.min_hotspots == 0 || self.min_hotspots > self.max_hotspots {
            return Err(IppError::Config("need 1 <= min_hotspots <= max_hotspots".into()));
        }
        if !(self.min_radius_frac > 0.0 && self.min_radius_frac <= self.max_radius_frac) {
            return Err(IppError::Config("need 0 < min_radius_frac <= max_radius_frac".into()));
        }
        Ok(())
    }
}

/// A generated field together with the hotspot mask it was drawn from.
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub field: GroundTruthField,
    pub hotspot_mask: Vec<bool>,
}

impl FieldSample {
    pub fn hotspot_fraction(&self) -> f64 {
        self.hotspot_mask.iter().filter(|&&m| m).count() as f64 / self.hotspot_mask.len() as f64
    }
}

pub fn generate_field(
    width: usize,
    height: usize,
    resolution: f64,
    seed: u64,
    gen: &FieldGenConfig,
) -> Result<GroundTruthField> {
    generate_field_sample(width, height, resolution, seed, gen).map(|s| s.field)
}

/// Draws elliptical hotspots at random, then samples every cell as a
/// Bernoulli variable with `p_high` inside the hotspots and `p_low` outside.
pub fn generate_field_sample(
    width: usize,
    height: usize,
    resolution: f64,
    seed: u64,
    gen: &FieldGenConfig,
) -> Result<FieldSample> {
    if width < 2 || height < 2 {
        return Err(IppError::Dimension(format!("field {width}x{height} is smaller than 2x2")));
    }
    gen.validate()?;
    let grid = GridSpec::new(width, height, resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut mask = vec![false; grid.len()];
    let count = rng.random_range(gen.min_hotspots..=gen.max_hotspots);
    for _ in 0..count {
        let hx = rng.random_range(0.0..width as f64);
        let hy = rng.random_range(0.0..height as f64);
        let rx = (rng.random_range(gen.min_radius_frac..=gen.max_radius_frac) * width as f64).max(0.5);
        let ry = (rng.random_range(gen.min_radius_frac..=gen.max_radius_frac) * height as f64).max(0.5);
        let mut covered = false;
        for (i, m) in mask.iter_mut().enumerate() {
            let (x, y) = grid.coords(i);
            let dx = (x as f64 + 0.5 - hx) / rx;
            let dy = (y as f64 + 0.5 - hy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                *m = true;
                covered = true;
            }
        }
        if !covered {
            // Thin ellipses can miss every cell center; keep the cell under the center.
            let cell = grid.index((hx as usize).min(width - 1), (hy as usize).min(height - 1));
            mask[cell] = true;
        }
    }

    let values = mask
        .iter()
        .map(|&hot| {
            let p = if hot { gen.p_high } else { gen.p_low };
            if rng.random_bool(p) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(FieldSample { field: GroundTruthField::new(grid, values)?, hotspot_mask: mask })
}

/// Region-of-interest rule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoiConfig {
    pub mu_th: f64,
    pub beta: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self { mu_th: 0.4, beta: 1.0 }
    }
}

impl RoiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu_th) || !(self.beta >= 0.0) {
            return Err(IppError::Config(format!(
                "roi needs mu_th in [0, 1] and beta >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Indices `i` with `mu[i] + beta * sigma[i] >= mu_th`, ascending.
pub fn roi_mask(mu: &[f64], sigma: &[f64], cfg: &RoiConfig) -> Result<Vec<usize>> {
    if mu.len() != sigma.len() {
        return Err(IppError::Dimension(format!(
            "mean has {} cells, std has {}",
            mu.len(),
            sigma.len()
        )));
    }
    Ok(mu
        .iter()
        .zip(sigma)
        .enumerate()
        .filter(|(_, (m, s))| *m + cfg.beta * *s >= cfg.mu_th)
        .map(|(i, _)| i)
        .collect())
}

/// RMSE of `mu` against the truth over `roi`. An empty region falls back to
/// the whole map.
pub fn rmse_in_roi(mu: &[f64], truth: &GroundTruthField, roi: &[usize]) -> f64 {
    let sq = |i: usize| {
        let d = mu[i] - truth.value(i);
        d * d
    };
    if roi.is_empty() {
        log::debug!("empty region of interest, rmse over the full map");
        let n = truth.values().len();
        return ((0..n).map(sq).sum::<f64>() / n as f64).sqrt();
    }
    (roi.iter().map(|&i| sq(i)).sum::<f64>() / roi.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn generation_is_deterministic_and_in_range() {
        let gen = FieldGenConfig::default();
        let a = generate_field(15, 15, 2.5, 7, &gen).unwrap();
        let b = generate_field(15, 15, 2.5, 7, &gen).unwrap();
        assert_eq!(a.values().len(), 225);
        assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, b);
        let c = generate_field(15, 15, 2.5, 8, &gen).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn degenerate_full_hotspot() {
        let gen = FieldGenConfig {
            p_high: 1.0,
            p_low: 0.0,
            min_hotspots: 1,
            max_hotspots: 1,
            min_radius_frac: 2.0,
            max_radius_frac: 2.0,
        };
        let f = generate_field(2, 2, 2.5, 0, &gen).unwrap();
        assert!(f.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn occupied_fraction_tracks_hotspot_area() {
        let gen = FieldGenConfig::default();
        let s = generate_field_sample(15, 15, 2.5, 7, &gen).unwrap();
        let n = s.hotspot_mask.len() as f64;
        let mut hot_cells = 0usize;
        let mut occupied = 0usize;
        for (i, &m) in s.hotspot_mask.iter().enumerate() {
            hot_cells += m as usize;
            occupied += (s.field.value(i) > 0.5) as usize;
        }
        let area = hot_cells as f64 / n;
        assert!(area > 0.0, "at least one hotspot cell");
        let expected = gen.p_high * area + gen.p_low * (1.0 - area);
        let observed = occupied as f64 / n;
        assert!((observed - expected).abs() <= 0.05, "observed {observed}, expected {expected}");
    }

    #[test]
    fn rejects_tiny_fields() {
        assert!(matches!(
            generate_field(1, 5, 1.0, 0, &FieldGenConfig::default()),
            Err(IppError::Dimension(_))
        ));
    }

    #[test]
    fn text_format_round_trips() {
        let f = generate_field(5, 3, 2.5, 3, &FieldGenConfig::default()).unwrap();
        let text = f.to_text();
        assert!(text.starts_with("5 3 2.5\n"));
        assert_eq!(GroundTruthField::from_text(&text).unwrap(), f);
        assert!(GroundTruthField::from_text("2 2 1\n0 1\n1\n").is_err());
    }

    #[test]
    fn roi_examples() {
        let cfg = RoiConfig { mu_th: 0.4, beta: 1.0 };
        assert_eq!(roi_mask(&[0.5, 0.3], &[0.0, 0.0], &cfg).unwrap(), vec![0]);
        let cfg = RoiConfig { mu_th: 0.4, beta: 0.0 };
        assert!(roi_mask(&[0.0, 0.0], &[1.0, 1.0], &cfg).unwrap().is_empty());
        assert!(matches!(roi_mask(&[0.0], &[1.0, 1.0], &cfg), Err(IppError::Dimension(_))));
    }

    #[test]
    fn roi_matches_loop_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mu: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let sigma: Vec<f64> = (0..100).map(|_| rng.random::<f64>() * 0.5).collect();
        let cfg = RoiConfig { mu_th: 0.6, beta: 0.7 };
        let mut expected = Vec::new();
        for i in 0..100 {
            if mu[i] + 0.7 * sigma[i] >= 0.6 {
                expected.push(i);
            }
        }
        assert_eq!(roi_mask(&mu, &sigma, &cfg).unwrap(), expected);
    }

    #[test]
    fn rmse_examples() {
        let grid = GridSpec::new(5, 2, 1.0).unwrap();
        let ones = GroundTruthField::new(grid, vec![1.0; 10]).unwrap();
        let all: Vec<usize> = (0..10).collect();
        assert_eq!(rmse_in_roi(&[1.0; 10], &ones, &all), 0.0);
        assert_eq!(rmse_in_roi(&[0.0; 10], &ones, &all), 1.0);
        // empty region falls back to the full map
        assert_eq!(rmse_in_roi(&[0.0; 10], &ones, &[]), 1.0);
    }

    #[test]
    fn rmse_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = GridSpec::new(10, 5, 1.0).unwrap();
        let truth: Vec<f64> = (0..50).map(|_| rng.random()).collect();
        let truth = GroundTruthField::new(grid, truth).unwrap();
        let mu: Vec<f64> = (0..50).map(|_| rng.random()).collect();
        let roi: Vec<usize> = (0..50).filter(|_| rng.random_bool(0.4)).collect();
        let mut acc = 0.0;
        for &i in &roi {
            acc += (mu[i] - truth.values()[i]).powi(2);
        }
        let direct = (acc / roi.len() as f64).sqrt();
        assert!((rmse_in_roi(&mu, &truth, &roi) - direct).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn roi_monotone_in_beta(
            cells in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..60),
            b1 in 0.0f64..3.0,
            extra in 0.0f64..3.0,
            th in 0.0f64..1.0,
        ) {
            let mu: Vec<f64> = cells.iter().map(|c| c.0).collect();
            let sigma: Vec<f64> = cells.iter().map(|c| c.1).collect();
            let lo = roi_mask(&mu, &sigma, &RoiConfig { mu_th: th, beta: b1 }).unwrap();
            let hi = roi_mask(&mu, &sigma, &RoiConfig { mu_th: th, beta: b1 + extra }).unwrap();
            prop_assert!(lo.iter().all(|i| hi.contains(i)));
        }

        #[test]
        fn rmse_bounded_for_unit_inputs(
            cells in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, any::<bool>()), 4..40),
        ) {
            let n = cells.len();
            let grid = GridSpec::new(n, 1, 1.0).unwrap();
            let truth = GroundTruthField::new(grid, cells.iter().map(|c| c.1).collect()).unwrap();
            let mu: Vec<f64> = cells.iter().map(|c| c.0).collect();
            let roi: Vec<usize> = (0..n).filter(|&i| cells[i].2).collect();
            let r = rmse_in_roi(&mu, &truth, &roi);
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
