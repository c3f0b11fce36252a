//! Complex wave field sampled on a periodic spatial grid.

use crate::domain::grid::SpatialGrid;
use crate::error::{Error, Result};
use crate::fft::{self, kahan_sum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Samples of `psi(t, .)` on a [`SpatialGrid`], dimensionless amplitude.
///
/// Serializes as the grid plus `[re, im]` pairs in node order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveField {
    grid: SpatialGrid,
    values: Vec<Complex64>,
}

impl WaveField {
    pub fn new(grid: SpatialGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::InvalidField(format!(
                "expected {} samples, got {}",
                grid.n_points(),
                values.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!(
                "non-finite sample at index {j}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zero(grid: SpatialGrid) -> Self {
        Self {
            grid,
            values: vec![Complex64::ZERO; grid.n_points()],
        }
    }

    pub fn from_fn(grid: SpatialGrid, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let values = grid.points().map(f).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> SpatialGrid {
        self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// `M[psi] = dx sum |psi_j|^2`, the discrete L^2 mass.
    pub fn mass(&self) -> f64 {
        self.grid.dx() * kahan_sum(self.values.iter().map(|v| v.norm_sqr()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.mass().sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `(dx sum |f_j - g_j|^2)^{1/2}`.
    pub fn l2_distance(&self, other: &WaveField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::IncompatibleGrids(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        let sum = kahan_sum(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a - b).norm_sqr()),
        );
        Ok((self.grid.dx() * sum).sqrt())
    }

    /// Unnormalized FFT coefficients of the samples.
    pub fn to_modes(&self) -> Vec<Complex64> {
        fft::fft(&self.values)
    }

    pub fn from_modes(grid: SpatialGrid, modes: &[Complex64]) -> Result<Self> {
        Self::new(grid, fft::ifft(modes))
    }

    /// Band-limited (trigonometric) evaluation at an arbitrary point. The
    /// evaluation is periodic with period `2L`.
    pub fn interpolate_at(&self, x: f64) -> Complex64 {
        interpolate_modes(&self.to_modes(), self.grid, x)
    }

    /// Largest |psi| over the outer 10% of the domain on each side; the
    /// indicator that the periodic truncation is still faithful.
    pub fn boundary_amplitude(&self) -> f64 {
        let edge = 0.9 * self.grid.half_width();
        self.values
            .iter()
            .zip(self.grid.points())
            .filter(|(_, x)| x.abs() >= edge)
            .map(|(v, _)| v.norm())
            .fold(0.0, f64::max)
    }

    /// `x -> sqrt(lambda) f(lambda x)` by band-limited resampling on the same
    /// grid. Mass is preserved up to interpolation error on resolved data.
    ///
    /// Arguments `lambda x` outside the domain evaluate to zero rather than
    /// wrapping around the torus; fields are kept below the boundary
    /// amplitude guard, so the discarded part is negligible by construction.
    pub fn rescale(&self, lambda: f64) -> Result<WaveField> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Domain(format!(
                "rescale requires lambda > 0, got {lambda}"
            )));
        }
        let modes = self.to_modes();
        let amp = lambda.sqrt();
        let values = self
            .grid
            .points()
            .map(|x| {
                if self.grid.contains(lambda * x) {
                    amp * interpolate_modes(&modes, self.grid, lambda * x)
                } else {
                    Complex64::ZERO
                }
            })
            .collect();
        WaveField::new(self.grid, values)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Result<WaveField> {
        WaveField::new(self.grid, self.values.iter().map(|v| f(*v)).collect())
    }

    pub fn conj(&self) -> WaveField {
        WaveField {
            grid: self.grid,
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn add_scaled(&self, other: &WaveField, scale: Complex64) -> Result<WaveField> {
        if self.grid != other.grid {
            return Err(Error::IncompatibleGrids("add_scaled".into()));
        }
        WaveField::new(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + scale * b)
                .collect(),
        )
    }
}

/// Evaluate the trigonometric interpolant with coefficients `modes` at `x`.
pub fn interpolate_modes(modes: &[Complex64], grid: SpatialGrid, x: f64) -> Complex64 {
    let n = modes.len();
    let mut acc = Complex64::ZERO;
    for (m, coeff) in modes.iter().enumerate() {
        let k = grid.wavenumber(m);
        // (-1)^m accounts for the grid offset x_0 = -L.
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * coeff * Complex64::from_polar(1.0, k * x);
    }
    acc / n as f64
}
