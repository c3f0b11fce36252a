//! Shared value types: grids, fields, coupling measures, traces, trajectories.
//!
//! Everything here is an immutable value after construction and safe to share
//! across threads.

pub mod field;
pub mod grid;
pub mod measure;
pub mod trace;
pub mod trajectory;
