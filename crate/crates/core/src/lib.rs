//! Data-driven reduced order models for the first-order acoustic wave
//! equation, and joint wave speed / density inversion built on them.
//!
//! The crate is organised bottom-up:
//!
//! * [`blockla`] block matrices, block Cholesky, block Arnoldi.
//! * [`wavesim`] staggered-grid acoustic operator and exponential time stepping.
//! * [`acquisition`] pulse, sources, array response and data matrices.
//! * [`rom`] mass/stiffness assembly, ROM factor and propagator.
//! * [`inversion`] parameterization, objectives and Gauss-Newton.
//! * [`harness`] experiment recipes, configuration and reports.
//! * [`io`] matrix files and image export.

pub mod acquisition;
pub mod blockla;
pub mod harness;
pub mod inversion;
pub mod io;
pub mod rom;
pub mod wavesim;

pub use blockla::{BlockMatrix, LinalgError, TallBlockMatrix};
pub use wavesim::{Grid, MediumModel};
