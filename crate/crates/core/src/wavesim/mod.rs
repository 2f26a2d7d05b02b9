//! Staggered-grid acoustics and exponential time stepping.
//!
//! Unknowns, in this order in every state vector:
//!
//! * `u_x` on the `(nx+1)·ny` vertical faces, index `i + (nx+1)·j`,
//! * `u_y` on the `nx·(ny+1)` horizontal faces, index `i + nx·j`,
//! * `p` on the `nx·ny` cell centres, index `i + nx·j`.
//!
//! `x` runs along the surface, `y` is depth. Pressure vanishes outside the
//! grid (sound-soft walls); velocity faces on the walls are unknowns.
//! States are scaled so that the evolution `ψ_t + Lψ = f` has a
//! skew-symmetric `L` and energy equals the squared Euclidean norm.

mod expm;
mod operator;
mod snapshots;

pub use expm::{
    bessel_j_sequence, expm_step, expm_step_with, ChebyshevPropagator, Integrator, KrylovOptions,
    Propagator,
};
pub use operator::{assemble_operator, AcousticOperator, DenseOperator, LinearOperator};
pub use snapshots::{
    initial_state, initial_state_with, propagate_snapshots, snapshot_correlations, snapshot_gram,
    source_nodes, ForcingScheme, SnapshotSet,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("medium is not positive: {0}")]
    NonPositiveMedium(String),
    #[error("Krylov approximation did not converge within dimension {dim} (error estimate {estimate:.3e})")]
    ConvergenceFailure { dim: usize, estimate: f64 },
    #[error("shift tau = {tau} is smaller than the pulse half support {t_s}")]
    InvalidShift { tau: f64, t_s: f64 },
    #[error("need at least {needed} snapshot levels, got {got}")]
    InsufficientSnapshots { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Uniform rectangular grid of `nx × ny` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    /// Spacings in km.
    pub hx: f64,
    pub hy: f64,
    /// Top-left corner in km.
    pub x0: f64,
    pub y0: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, hx: f64, hy: f64) -> Result<Self> {
        Self::with_origin(nx, ny, hx, hy, 0.0, 0.0)
    }

    pub fn with_origin(nx: usize, ny: usize, hx: f64, hy: f64, x0: f64, y0: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(SimError::InvalidGrid(format!("need nx, ny >= 2, got {nx}x{ny}")));
        }
        if !(hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite()) {
            return Err(SimError::InvalidGrid(format!("spacings must be positive, got {hx}, {hy}")));
        }
        Ok(Grid { nx, ny, hx, hy, x0, y0 })
    }

    /// Grid of `nx × ny` cells spanning `[0, width] × [0, depth]`.
    pub fn covering(width: f64, depth: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, width / nx as f64, depth / ny as f64)
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.hx
    }

    pub fn depth(&self) -> f64 {
        self.ny as f64 * self.hy
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_ux(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    pub fn n_uy(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    pub fn n_dof(&self) -> usize {
        self.n_ux() + self.n_uy() + self.n_cells()
    }

    pub fn uy_offset(&self) -> usize {
        self.n_ux()
    }

    pub fn p_offset(&self) -> usize {
        self.n_ux() + self.n_uy()
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn cell(&self, i: usize, j: usize) -> usize {
        i + self.nx * j
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x0 + (i as f64 + 0.5) * self.hx,
            self.y0 + (j as f64 + 0.5) * self.hy,
        )
    }

    /// Position of `u_x` face `(i, j)`, `i ∈ 0..=nx`.
    pub fn ux_face(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x0 + i as f64 * self.hx, self.y0 + (j as f64 + 0.5) * self.hy)
    }

    /// Position of `u_y` face `(i, j)`, `j ∈ 0..=ny`.
    pub fn uy_face(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x0 + (i as f64 + 0.5) * self.hx, self.y0 + j as f64 * self.hy)
    }

    /// Strictly inside the domain.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x > self.x0 && x < self.x0 + self.width() && y > self.y0 && y < self.y0 + self.depth()
    }

    /// Cell containing `(x, y)`, clamped to the grid.
    pub fn locate(&self, x: f64, y: f64) -> (usize, usize) {
        let i = ((x - self.x0) / self.hx).floor().clamp(0.0, (self.nx - 1) as f64) as usize;
        let j = ((y - self.y0) / self.hy).floor().clamp(0.0, (self.ny - 1) as f64) as usize;
        (i, j)
    }

    /// Discrete inner product `hx·hy·aᵀb`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.cell_area() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }
}

/// Wave speed (km/s) and density (g/cm³) per cell, with reference values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumModel {
    pub c: Vec<f64>,
    pub rho: Vec<f64>,
    pub c_o: f64,
    pub rho_o: f64,
}

impl MediumModel {
    pub fn new(grid: &Grid, c: Vec<f64>, rho: Vec<f64>, c_o: f64, rho_o: f64) -> Result<Self> {
        let n = grid.n_cells();
        if c.len() != n || rho.len() != n {
            return Err(SimError::ShapeMismatch(format!(
                "medium fields have {} / {} values, grid has {} cells",
                c.len(),
                rho.len(),
                n
            )));
        }
        let m = MediumModel { c, rho, c_o, rho_o };
        m.check_positive()?;
        Ok(m)
    }

    pub fn homogeneous(grid: &Grid, c_o: f64, rho_o: f64) -> Self {
        let n = grid.n_cells();
        MediumModel {
            c: vec![c_o; n],
            rho: vec![rho_o; n],
            c_o,
            rho_o,
        }
    }

    /// Samples `f(x, y) -> (c, rho)` at cell centres.
    pub fn from_fn(grid: &Grid, c_o: f64, rho_o: f64, f: impl Fn(f64, f64) -> (f64, f64)) -> Result<Self> {
        let mut c = Vec::with_capacity(grid.n_cells());
        let mut rho = Vec::with_capacity(grid.n_cells());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.cell_center(i, j);
                let (ci, ri) = f(x, y);
                c.push(ci);
                rho.push(ri);
            }
        }
        Self::new(grid, c, rho, c_o, rho_o)
    }

    pub fn check_positive(&self) -> Result<()> {
        let ok = |v: &f64| *v > 0.0 && v.is_finite();
        if let Some(k) = self.c.iter().position(|v| !ok(v)) {
            return Err(SimError::NonPositiveMedium(format!("c[{k}] = {}", self.c[k])));
        }
        if let Some(k) = self.rho.iter().position(|v| !ok(v)) {
            return Err(SimError::NonPositiveMedium(format!("rho[{k}] = {}", self.rho[k])));
        }
        if !(self.c_o > 0.0 && self.rho_o > 0.0) {
            return Err(SimError::NonPositiveMedium("reference values".into()));
        }
        Ok(())
    }

    /// Bulk modulus `K = c²ρ` per cell.
    pub fn bulk_modulus(&self) -> Vec<f64> {
        self.c.iter().zip(&self.rho).map(|(c, r)| c * c * r).collect()
    }

    /// Reference impedance `ζ_o = sqrt(K_o ρ_o) = c_o ρ_o`.
    pub fn reference_impedance(&self) -> f64 {
        self.c_o * self.rho_o
    }
}
