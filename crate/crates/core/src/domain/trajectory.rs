//! Serializable record of one simulation run.

use crate::domain::field::WaveField;
use crate::domain::grid::TimeGrid;
use crate::domain::trace::BoundaryTrace;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Sampled fields, traces and per-node diagnostics of one run.
///
/// JSON schema: `config` is an arbitrary snapshot supplied by the producer;
/// `sample_indices` are node indices into `times`; `fields[i]` is the field
/// at `times.node(sample_indices[i])`; `mass_series` and `sup_series` have
/// one entry per time node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub config: serde_json::Value,
    pub times: TimeGrid,
    pub sample_indices: Vec<usize>,
    pub fields: Vec<WaveField>,
    pub trace: Option<BoundaryTrace>,
    pub mass_series: Vec<f64>,
    pub sup_series: Vec<f64>,
    pub max_boundary_amplitude: f64,
}

impl TrajectoryRecord {
    pub fn validate(&self) -> Result<()> {
        if self.sample_indices.len() != self.fields.len() {
            return Err(Error::InvalidField(
                "one sampled field per sample index is required".into(),
            ));
        }
        if self.sample_indices.iter().any(|&n| n >= self.times.len()) {
            return Err(Error::InvalidField(
                "sample indices must be nodes of the time grid".into(),
            ));
        }
        Ok(())
    }

    pub fn sample_times(&self) -> Vec<f64> {
        self.sample_indices
            .iter()
            .map(|&n| self.times.node(n))
            .collect()
    }

    /// Largest relative mass drift along the run.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.mass_series.first().copied().unwrap_or(0.0);
        if m0 == 0.0 {
            return self.mass_series.iter().fold(0.0f64, |a, &m| a.max(m));
        }
        self.mass_series
            .iter()
            .map(|m| (m - m0).abs() / m0)
            .fold(0.0, f64::max)
    }
}

const BINARY_MAGIC: u64 = 0x504e_4c53_4631_u64; // "PNLSF1"

/// Binary field snapshot: little-endian header `(magic u64, n_points u64,
/// half_width f64, t f64)` followed by `n_points` interleaved `(re, im)`
/// f64 pairs in node order.
pub fn write_field_binary(field: &WaveField, t: f64, out: &mut impl Write) -> std::io::Result<()> {
    out.write_all(&BINARY_MAGIC.to_le_bytes())?;
    out.write_all(&(field.grid().n_points() as u64).to_le_bytes())?;
    out.write_all(&field.grid().half_width().to_le_bytes())?;
    out.write_all(&t.to_le_bytes())?;
    for v in field.values() {
        out.write_all(&v.re.to_le_bytes())?;
        out.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}

/// Inverse of [`write_field_binary`]; returns the field and its time stamp.
pub fn read_field_binary(input: &mut impl Read) -> Result<(WaveField, f64)> {
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |input: &mut dyn Read| -> Result<u64> {
        input
            .read_exact(&mut u64buf)
            .map_err(|e| Error::InvalidField(format!("binary snapshot: {e}")))?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let magic = read_u64(input)?;
    if magic != BINARY_MAGIC {
        return Err(Error::InvalidField("binary snapshot: bad magic".into()));
    }
    let n_points = read_u64(input)? as usize;
    let mut f64buf = [0u8; 8];
    let mut read_f64 = |input: &mut dyn Read| -> Result<f64> {
        input
            .read_exact(&mut f64buf)
            .map_err(|e| Error::InvalidField(format!("binary snapshot: {e}")))?;
        Ok(f64::from_le_bytes(f64buf))
    };
    let half_width = read_f64(input)?;
    let t = read_f64(input)?;
    let grid = crate::domain::grid::SpatialGrid::new(half_width, n_points)?;
    let mut values = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let re = read_f64(input)?;
        let im = read_f64(input)?;
        values.push(num_complex::Complex64::new(re, im));
    }
    Ok((WaveField::new(grid, values)?, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::grid::SpatialGrid;
    use num_complex::Complex64;

    #[test]
    fn binary_snapshot_round_trip() {
        let grid = SpatialGrid::new(5.0, 64).unwrap();
        let f = WaveField::from_fn(grid, |x| Complex64::new((-x * x).exp(), 0.5 * x)).unwrap();
        let mut buf = Vec::new();
        write_field_binary(&f, 0.75, &mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 64 * 16);
        let (g, t) = read_field_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(t, 0.75);
        assert_eq!(f, g);
    }

    #[test]
    fn sample_indices_validated() {
        let times = TimeGrid::new(1.0, 4).unwrap();
        let grid = SpatialGrid::new(5.0, 64).unwrap();
        let rec = TrajectoryRecord {
            config: serde_json::json!({}),
            times,
            sample_indices: vec![9],
            fields: vec![WaveField::zero(grid)],
            trace: None,
            mass_series: vec![1.0; 5],
            sup_series: vec![1.0; 5],
            max_boundary_amplitude: 0.0,
        };
        assert!(rec.validate().is_err());
    }
}
