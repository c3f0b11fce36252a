//! Uniform periodic spatial grid and uniform time grid.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Uniform grid on the periodic domain `[-L, L)` with a power-of-two number
/// of points, so that the discrete free flow is a diagonal Fourier multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    half_width: f64,
    n_points: usize,
}

impl SpatialGrid {
    pub fn new(half_width: f64, n_points: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half_width must be positive and finite, got {half_width}"
            )));
        }
        if n_points < 8 || !n_points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n_points must be a power of two >= 8, got {n_points}"
            )));
        }
        Ok(Self {
            half_width,
            n_points,
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n_points as f64
    }

    /// `x_j = -L + j dx`.
    pub fn point(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.dx()
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |j| self.point(j))
    }

    pub fn contains(&self, x: f64) -> bool {
        -self.half_width <= x && x < self.half_width
    }

    /// Signed wavenumber of FFT bin `m`: `k = pi m~ / L` with
    /// `m~ in [-n/2, n/2)` under the usual aliasing of the upper half.
    pub fn wavenumber(&self, m: usize) -> f64 {
        let n = self.n_points;
        let signed = if m < n / 2 {
            m as i64
        } else {
            m as i64 - n as i64
        };
        PI * signed as f64 / self.half_width
    }

    /// Largest resolved |k|.
    pub fn nyquist(&self) -> f64 {
        PI / self.dx()
    }
}

/// Uniform time grid `t_n = n dt`, `n = 0..=n_steps`, over `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_final: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::InvalidTimeGrid(format!(
                "t_final must be positive and finite, got {t_final}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidTimeGrid("n_steps must be >= 1".into()));
        }
        Ok(Self { t_final, n_steps })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn node(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |n| self.node(n))
    }

    /// Index of the node equal to `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let raw = t / self.dt();
        let idx = raw.round();
        if (raw - idx).abs() > 1e-9 || idx < 0.0 || idx > self.n_steps as f64 {
            return Err(Error::NotATimeNode(t));
        }
        Ok(idx as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_bad_sizes() {
        assert!(SpatialGrid::new(10.0, 100).is_err());
        assert!(SpatialGrid::new(10.0, 4).is_err());
        assert!(SpatialGrid::new(-1.0, 64).is_err());
        assert!(SpatialGrid::new(10.0, 64).is_ok());
    }

    #[test]
    fn grid_points_cover_domain() {
        let g = SpatialGrid::new(20.0, 2048).unwrap();
        assert_eq!(g.point(0), -20.0);
        assert!((g.point(1024)).abs() < 1e-14); // zero is a node
        assert!((g.dx() - 40.0 / 2048.0).abs() < 1e-16);
        let last = g.point(2047);
        assert!(last < 20.0 && last > 20.0 - 2.0 * g.dx());
    }

    #[test]
    fn wavenumbers_are_signed() {
        let g = SpatialGrid::new(PI, 8).unwrap();
        // dk = pi / L = 1
        assert_eq!(g.wavenumber(0), 0.0);
        assert!((g.wavenumber(1) - 1.0).abs() < 1e-15);
        assert!((g.wavenumber(7) + 1.0).abs() < 1e-15);
        assert!((g.wavenumber(4) + 4.0).abs() < 1e-15);
        assert!((g.nyquist() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn time_grid_nodes() {
        let t = TimeGrid::new(2.0, 512).unwrap();
        assert_eq!(t.len(), 513);
        assert!((t.node(512) - 2.0).abs() < 1e-14);
        assert_eq!(t.index_of(1.0).unwrap(), 256);
        assert!(t.index_of(1.0 + 0.3 * t.dt()).is_err());
        assert!(TimeGrid::new(0.0, 4).is_err());
    }
}
