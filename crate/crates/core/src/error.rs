//! Error type shared by all solver layers.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),

    #[error("invalid spatial grid: {0}")]
    InvalidGrid(String),

    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),

    #[error("invalid coupling measure: {0}")]
    InvalidMeasure(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("free kernel is singular at t = 0")]
    SingularKernel,

    #[error("under-resolved profile: epsilon = {epsilon:.6e} but the grid requires epsilon >= 4 dx = {:.6e}", 4.0 * dx)]
    UnderResolvedProfile { epsilon: f64, dx: f64 },

    #[error("fixed-point iteration did not converge at node {node} (t = {time:.6}); the step size is too large for this data")]
    StepSizeTooLarge { node: usize, time: f64 },

    #[error("boundary amplitude {amplitude:.3e} exceeds threshold {threshold:.3e} at t = {time:.6}; the periodic truncation is no longer faithful")]
    TruncationDomain {
        amplitude: f64,
        threshold: f64,
        time: f64,
    },

    #[error("t = {0:.12} is not a node of the trace time grid")]
    NotATimeNode(f64),

    #[error("trace window too short: {0}")]
    WindowTooShort(String),

    #[error("frequency cutoff {cutoff:.4} exceeds the grid Nyquist frequency {nyquist:.4}")]
    AboveNyquist { cutoff: f64, nyquist: f64 },

    #[error("profile file: {0}")]
    ProfileFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;
