//! Homogenized vortex pinning in perforated superconductors.
//!
//! The crate covers both scales of the problem:
//!
//! * [`multiplicity`]: the homogenized vortex energy density `Φ`, its convex
//!   conjugate `Φ*`, the mollified conjugate and the cell linear program.
//! * [`grid`]: finite differences for the London operator `−Δu + u` on masked
//!   uniform grids, plus the quadratic field energy.
//! * [`dual`]: the nonsmooth dual functional, solved by cyclic proximal
//!   relaxation, with vorticity recovery and multiplicity-region classification.
//! * [`critical`]: the critical-field ladder and phase diagrams.
//! * [`micro`]: integer degree assignments on an ε-lattice of holes, the
//!   recovery-sequence construction and the empirical partition of unity.
//! * [`io`]: CSV/JSON/PPM artifacts and mask files.

pub mod critical;
pub mod dual;
pub mod error;
pub mod grid;
pub mod io;
pub mod micro;
pub mod multiplicity;

pub use error::{Error, Result};
