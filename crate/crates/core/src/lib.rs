//! Numerical laboratory for the one-dimensional cubic defocusing NLS with
//! nonlinearities concentrated at a point or on an `eps`-scale density.
//!
//! The crate provides four solver layers:
//!
//! - [`propagator`]: the free flow `e^{it d^2/dx^2}` on a periodic spectral
//!   grid, its explicit point-source kernel, and Strichartz-type norms;
//! - [`volterra`]: the boundary-trace Volterra solver for purely atomic
//!   couplings, built on product integration of the `(t-s)^{-1/2}` memory
//!   kernel;
//! - [`reconstruction`]: Duhamel reconstruction of the full field from a
//!   boundary trace, and extraction of scattering states;
//! - [`concentrated`]: a Strang-split spectral stepper for couplings given by
//!   an integrable density.
//!
//! [`diagnostics`] turns the analytic structure of the model (kernel
//! identities, spacetime bounds, conservation laws, symmetries) into
//! machine-checkable reports.

pub mod concentrated;
pub mod diagnostics;
pub mod domain;
pub mod error;
pub mod fft;
pub mod fresnel;
pub mod propagator;
pub mod reconstruction;
pub mod volterra;

pub use domain::field::WaveField;
pub use domain::grid::{SpatialGrid, TimeGrid};
pub use domain::measure::{CouplingMeasure, DensitySamples, Profile};
pub use domain::trace::BoundaryTrace;
pub use domain::trajectory::TrajectoryRecord;
pub use error::{Error, Result};
