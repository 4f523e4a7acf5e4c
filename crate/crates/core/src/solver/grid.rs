use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GRID_POINTS: usize = 2000;
pub const MIN_GRID_POINTS: usize = 64;
/// Default grid bounds as multiples of `max(|K|, 1)`.
pub const DEFAULT_LO_FACTOR: f64 = 1e-2;
pub const DEFAULT_HI_FACTOR: f64 = 1e3;

/// Requested grid; unset bounds default to multiples of the wealth scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_points: usize,
    pub x_lo: Option<f64>,
    pub x_hi: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_points: DEFAULT_GRID_POINTS,
            x_lo: None,
            x_hi: None,
        }
    }
}

impl GridSpec {
    pub fn with_points(n_points: usize) -> Self {
        Self {
            n_points,
            ..Self::default()
        }
    }

    pub fn bounds(&self, scale: f64) -> (f64, f64) {
        (
            self.x_lo.unwrap_or(DEFAULT_LO_FACTOR * scale),
            self.x_hi.unwrap_or(DEFAULT_HI_FACTOR * scale),
        )
    }

    /// One more decade on both sides, same point count.
    pub fn widened(&self, scale: f64) -> Self {
        let (lo, hi) = self.bounds(scale);
        Self {
            n_points: self.n_points,
            x_lo: Some(lo / 10.0),
            x_hi: Some(hi * 10.0),
        }
    }
}

/// Log-spaced wealth levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WealthGrid {
    pub points: Vec<f64>,
}

impl WealthGrid {
    pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < MIN_GRID_POINTS {
            return Err(Error::InvalidParam(format!(
                "grid needs at least {MIN_GRID_POINTS} points, got {n}"
            )));
        }
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo) {
            return Err(Error::InvalidParam(format!(
                "grid bounds must satisfy 0 < x_lo < x_hi, got [{lo}, {hi}]"
            )));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let step = (b - a) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| (a + step * i as f64).exp()).collect();
        points[0] = lo;
        points[n - 1] = hi;
        Ok(Self { points })
    }

    pub fn from_spec(spec: &GridSpec, scale: f64) -> Result<Self> {
        let (lo, hi) = spec.bounds(scale);
        Self::log_spaced(lo, hi, spec.n_points)
    }

    pub fn lo(&self) -> f64 {
        self.points[0]
    }

    pub fn hi(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
