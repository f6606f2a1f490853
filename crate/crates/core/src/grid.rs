//! Grid of candidate thresholds over [0, 1].

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("grid points must be strictly increasing")]
    NotIncreasing,
    #[error("grid must lie in [0, 1] and end exactly at 1.0 (last point {0})")]
    BadEndpoints(f64),
}

/// Strictly increasing candidate thresholds in [0, 1]; the last point is
/// always exactly 1.0 so that the safe fallback threshold is on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaGrid {
    points: Vec<f64>,
}

impl BetaGrid {
    /// Uniform grid of `resolution` points from 0 to 1 inclusive.
    pub fn uniform(resolution: usize) -> Result<Self, GridError> {
        if resolution < 2 {
            return Err(GridError::TooFewPoints(resolution));
        }
        let n = resolution;
        let mut points: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        // Guard against accumulation error in the division above.
        points[n - 1] = 1.0;
        Ok(Self { points })
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self, GridError> {
        if points.len() < 2 {
            return Err(GridError::TooFewPoints(points.len()));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GridError::NotIncreasing);
        }
        let last = *points.last().unwrap();
        if points[0] < 0.0 || last != 1.0 {
            return Err(GridError::BadEndpoints(last));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: at least 2 points
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.points[idx]
    }

    /// Index of the grid point closest to `beta` (ties resolve downward).
    pub fn nearest_index(&self, beta: f64) -> usize {
        let pts = &self.points;
        let hi = pts.partition_point(|&p| p < beta);
        if hi == 0 {
            return 0;
        }
        if hi == pts.len() {
            return pts.len() - 1;
        }
        let lo = hi - 1;
        if beta - pts[lo] <= pts[hi] - beta {
            lo
        } else {
            hi
        }
    }
}
