//! Mixed multiscale finite element solver for Darcy flow in high-contrast
//! heterogeneous media.
//!
//! The library builds per-coarse-edge velocity bases from local unit-flux
//! solutions, reduces them through local generalized eigenproblems (with an
//! optional oversampling/POD route), couples the reduced basis in a mixed
//! saddle system with piecewise-constant coarse pressures, and recovers
//! fine-grid conservative velocities by local postprocessing. An explicit
//! upwind finite-volume transport solver consumes the resulting fluxes for
//! single- and two-phase flow.

pub mod error;
pub mod grid;
pub mod perm;
pub mod fine;
pub mod forms;
pub mod basis;
pub mod snapshot;
pub mod spectral;
pub mod coarse;
pub mod postprocess;
pub mod oversample;
pub mod transport;
pub mod report;
pub mod config;
pub mod driver;

pub use error::{Error, ErrorCategory, Result};
