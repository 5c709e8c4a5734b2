//! Uniform grids for discretized densities.

use crate::error::{QncError, Result};

/// Default number of grid points.
pub const DEFAULT_POINTS: usize = 1024;
/// Default half-width in units of the slab standard deviation.
pub const DEFAULT_HALF_WIDTH_SDS: f64 = 8.0;

/// Symmetric cell-centred grid on `[-half_width, half_width]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    half_width: f64,
    points: usize,
}

impl Grid {
    pub fn new(half_width: f64, points: usize) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(QncError::InvalidArgument(format!("grid half-width {half_width}")));
        }
        if points < 2 || !points.is_power_of_two() {
            return Err(QncError::InvalidArgument(format!(
                "grid point count {points} must be a power of two >= 2"
            )));
        }
        Ok(Self { half_width, points })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    pub fn point(&self, j: usize) -> f64 {
        -self.half_width + (j as f64 + 0.5) * self.spacing()
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.points).map(|j| self.point(j)).collect()
    }
}

/// Mean of a normalized mass vector on `grid`.
pub fn mean(grid: &Grid, p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(j, &w)| w * grid.point(j)).sum()
}

/// Rescales `p` to unit mass; returns the original mass.
pub fn normalize(p: &mut [f64]) -> f64 {
    let total: f64 = p.iter().sum();
    if total > 0.0 && total.is_finite() {
        let inv = 1.0 / total;
        p.iter_mut().for_each(|w| *w *= inv);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_cells() {
        let g = Grid::new(4.0, 8).unwrap();
        assert_eq!(g.spacing(), 1.0);
        assert_eq!(g.point(0), -3.5);
        assert_eq!(g.point(7), 3.5);
        let v = g.values();
        for j in 0..8 {
            assert_eq!(v[j], -v[7 - j]);
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(Grid::new(1.0, 100).is_err());
        assert!(Grid::new(0.0, 64).is_err());
        assert!(Grid::new(f64::NAN, 64).is_err());
    }
}
