//! Boundary traces: the time series `phi_j(t_n) = psi(t_n, x_j)` at the
//! atoms of a coupling measure.

use crate::domain::grid::TimeGrid;
use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryTrace {
    times: TimeGrid,
    /// Atom locations, one per series.
    locations: Vec<f64>,
    /// `series[j][n] = phi_j(t_n)`, length `times.len()` each.
    series: Vec<Vec<Complex64>>,
}

impl BoundaryTrace {
    pub fn new(times: TimeGrid, locations: Vec<f64>, series: Vec<Vec<Complex64>>) -> Result<Self> {
        if locations.len() != series.len() {
            return Err(Error::InvalidField(
                "one trace series per atom is required".into(),
            ));
        }
        for s in &series {
            if s.len() != times.len() {
                return Err(Error::InvalidField(format!(
                    "trace series length {} does not match the {} time nodes",
                    s.len(),
                    times.len()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidField("non-finite trace entry".into()));
            }
        }
        Ok(Self {
            times,
            locations,
            series,
        })
    }

    pub fn times(&self) -> TimeGrid {
        self.times
    }

    pub fn n_atoms(&self) -> usize {
        self.locations.len()
    }

    pub fn location(&self, atom: usize) -> f64 {
        self.locations[atom]
    }

    pub fn series(&self, atom: usize) -> &[Complex64] {
        &self.series[atom]
    }

    pub fn value(&self, atom: usize, node: usize) -> Complex64 {
        self.series[atom][node]
    }

    /// Largest pointwise difference against another trace on the same grid.
    pub fn sup_distance(&self, other: &BoundaryTrace) -> Result<f64> {
        if self.times != other.times || self.locations.len() != other.locations.len() {
            return Err(Error::IncompatibleGrids("trace comparison".into()));
        }
        let mut sup = 0.0f64;
        for (a, b) in self.series.iter().zip(&other.series) {
            for (x, y) in a.iter().zip(b) {
                sup = sup.max((x - y).norm());
            }
        }
        Ok(sup)
    }

    /// CSV export, columns `t, atom_index, re_phi, im_phi`.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "t,atom_index,re_phi,im_phi")?;
        for (j, s) in self.series.iter().enumerate() {
            for (n, v) in s.iter().enumerate() {
                writeln!(out, "{},{},{},{}", self.times.node(n), j, v.re, v.im)?;
            }
        }
        Ok(())
    }
}

/// Cubic nonlinearity sample `F = |phi|^2 phi` at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearSample(pub Complex64);

impl NonlinearSample {
    pub fn from_trace_value(phi: Complex64) -> Self {
        Self(phi.norm_sqr() * phi)
    }
}

/// The per-node cubic samples of one atom's series.
pub fn nonlinear_series(trace: &BoundaryTrace, atom: usize) -> Vec<Complex64> {
    trace
        .series(atom)
        .iter()
        .map(|phi| phi.norm_sqr() * phi)
        .collect()
}
