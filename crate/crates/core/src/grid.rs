use serde::{Deserialize, Serialize};

use crate::{IppError, Result};

/// A 3D position in meters; `z` is altitude above ground.
pub type Position = [f64; 3];

/// Geometry of a rectangular cell grid. Cell `(x, y)` has index
/// `y * width + x` and its center at `((x + 0.5) r, (y + 0.5) r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, resolution: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(IppError::Dimension(format!("grid {width}x{height} has no cells")));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(IppError::Dimension(format!("resolution {resolution} must be positive")));
        }
        Ok(Self { width, height, resolution })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    pub fn center(&self, index: usize) -> [f64; 2] {
        let (x, y) = self.coords(index);
        [(x as f64 + 0.5) * self.resolution, (y as f64 + 0.5) * self.resolution]
    }

    /// Map extent in meters along x and y.
    pub fn extent(&self) -> [f64; 2] {
        [self.width as f64 * self.resolution, self.height as f64 * self.resolution]
    }

    /// Length in meters of one normalized distance unit (the longer map side).
    pub fn unit_length(&self) -> f64 {
        let [ex, ey] = self.extent();
        ex.max(ey)
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        let [ex, ey] = self.extent();
        (0.0..=ex).contains(&x) && (0.0..=ey).contains(&y)
    }

    /// Index of the cell containing `(x, y)`; points on the far boundary
    /// belong to the last row/column.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<usize> {
        if !self.contains_xy(x, y) {
            return None;
        }
        let cx = ((x / self.resolution) as usize).min(self.width - 1);
        let cy = ((y / self.resolution) as usize).min(self.height - 1);
        Some(self.index(cx, cy))
    }
}
