//! Uniform periodic grid on `[-L, L)` used by the spectral field solvers.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    n_points: usize,
    extent: f64,
    spacing: f64,
    positions: Vec<f64>,
    wavenumbers: Vec<f64>,
}

impl SpatialGrid {
    /// Grid of `n_points` (a power of two) spanning `[-extent, extent)`.
    pub fn new(n_points: usize, extent: f64) -> Result<Self> {
        if n_points < 1 || !n_points.is_power_of_two() {
            return Err(invalid(format!("grid size {n_points} is not a power of two")));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(invalid(format!("grid extent must be positive, got {extent}")));
        }
        let spacing = 2.0 * extent / n_points as f64;
        let positions = (0..n_points).map(|j| -extent + j as f64 * spacing).collect();
        let dk = PI / extent;
        let wavenumbers = (0..n_points)
            .map(|j| {
                let j = j as i64;
                let n = n_points as i64;
                let signed = if j < n / 2 { j } else { j - n };
                signed as f64 * dk
            })
            .collect();
        Ok(Self {
            n_points,
            extent,
            spacing,
            positions,
            wavenumbers,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Half-width `L`.
    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// Grid spacing `Δ`.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn nyquist_wavenumber(&self) -> f64 {
        PI / self.spacing
    }

    /// Riemann sum `Δ Σ f`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.spacing * values.iter().sum::<f64>()
    }

    pub fn norm_squared(&self, field: &[Complex64]) -> f64 {
        self.spacing * field.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    pub(crate) fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.n_points {
            return Err(invalid(format!(
                "{what} has {len} samples but the grid has {} points",
                self.n_points
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_times_points_spans_the_box() {
        let g = SpatialGrid::new(64, 3.0).unwrap();
        assert!((g.spacing() * 64.0 - 6.0).abs() < 1e-12);
        assert_eq!(g.positions()[0], -3.0);
        assert!((g.positions()[63] - (3.0 - g.spacing())).abs() < 1e-12);
    }

    #[test]
    fn wavenumbers_follow_fft_order() {
        let g = SpatialGrid::new(8, PI).unwrap();
        let k = g.wavenumbers();
        assert_eq!(k, &[0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0]);
        assert!((g.nyquist_wavenumber() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(SpatialGrid::new(100, 1.0).is_err());
        assert!(SpatialGrid::new(0, 1.0).is_err());
        assert!(SpatialGrid::new(64, -1.0).is_err());
    }
}
