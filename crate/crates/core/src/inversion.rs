//! Medium parameterization, ROM and data-misfit objectives, and
//! Gauss-Newton with adaptive Tikhonov damping and layer stripping.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{support_cells, DataMatrices, SourceArray};
use crate::blockla::{right_solve_upper, BlockMatrix};
use crate::rom::{guess_factor, RomError, RomFactor, SimConfig};
use crate::wavesim::{Grid, MediumModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InversionError {
    #[error("non-positive medium: {0}")]
    NonPositiveMedium(String),
    #[error("normal equations singular even with mu = {mu:.3e}")]
    SingularNormalEquations { mu: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Rom(#[from] RomError),
    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<InversionError>,
    },
}

pub type Result<T> = std::result::Result<T, InversionError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub c_min: f64,
    pub c_max: f64,
    pub rho_min: f64,
    pub rho_max: f64,
}

impl Bounds {
    /// `[0.2, 5]` times the reference values.
    pub fn relative(c_o: f64, rho_o: f64) -> Self {
        Bounds {
            c_min: 0.2 * c_o,
            c_max: 5.0 * c_o,
            rho_min: 0.2 * rho_o,
            rho_max: 5.0 * rho_o,
        }
    }
}

/// `c̃ = c_o + Σ η_l β_l`, `ρ̃ = ρ_o + Σ η_{N+l} β_l` with Gaussian bumps
/// `β_l = exp(−(Δx/w_x)² − (Δy/w_y)²)` centred on an `nbx × nby` grid over
/// `region`, widths equal to the centre spacing. Bumps are multiplied by a
/// taper that vanishes where sources act.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameterization {
    pub nbx: usize,
    pub nby: usize,
    /// `[x_min, x_max, y_min, y_max]` in km.
    pub region: [f64; 4],
    pub c_o: f64,
    pub rho_o: f64,
    pub bounds: Option<Bounds>,
    /// `n_cells × N`.
    basis: DMatrix<f64>,
}

impl Parameterization {
    pub fn new(grid: &Grid, nbx: usize, nby: usize, region: [f64; 4], c_o: f64, rho_o: f64) -> Self {
        assert!(nbx >= 1 && nby >= 1, "basis grid must be non-empty");
        let [x0, x1, y0, y1] = region;
        let sx = (x1 - x0) / nbx as f64;
        let sy = (y1 - y0) / nby as f64;
        let n = nbx * nby;
        let mut basis = DMatrix::zeros(grid.n_cells(), n);
        for by in 0..nby {
            for bx in 0..nbx {
                let l = bx + nbx * by;
                let cx = x0 + (bx as f64 + 0.5) * sx;
                let cy = y0 + (by as f64 + 0.5) * sy;
                for j in 0..grid.ny {
                    for i in 0..grid.nx {
                        let (x, y) = grid.cell_center(i, j);
                        let q = ((x - cx) / sx).powi(2) + ((y - cy) / sy).powi(2);
                        if q < 40.0 {
                            basis[(grid.cell(i, j), l)] = (-q).exp();
                        }
                    }
                }
            }
        }
        Parameterization {
            nbx,
            nby,
            region,
            c_o,
            rho_o,
            bounds: Some(Bounds::relative(c_o, rho_o)),
            basis,
        }
    }

    /// Whole-domain parameterization.
    pub fn covering(grid: &Grid, nbx: usize, nby: usize, c_o: f64, rho_o: f64) -> Self {
        let region = [grid.x0, grid.x0 + grid.width(), grid.y0, grid.y0 + grid.depth()];
        Self::new(grid, nbx, nby, region, c_o, rho_o)
    }

    /// Zeroes every bump on the source supports and ramps it back to one
    /// over `ramp` cells.
    pub fn with_taper(mut self, grid: &Grid, array: &SourceArray, ramp: usize) -> Self {
        let mut inside = vec![false; grid.n_cells()];
        for s in 0..array.n_sensors() {
            for c in support_cells(array, grid, s) {
                inside[c] = true;
            }
        }
        let h = grid.hx.max(grid.hy);
        let width = (ramp.max(1)) as f64 * h;
        let masked: Vec<(f64, f64)> = (0..grid.n_cells())
            .filter(|&c| inside[c])
            .map(|c| grid.cell_center(c % grid.nx, c / grid.nx))
            .collect();
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let c = grid.cell(i, j);
                let w = if inside[c] {
                    0.0
                } else {
                    let (x, y) = grid.cell_center(i, j);
                    let d = masked
                        .iter()
                        .map(|&(mx, my)| (mx - x).abs().max((my - y).abs()))
                        .fold(f64::INFINITY, f64::min);
                    let s = (d / width).clamp(0.0, 1.0);
                    s * s * (3.0 - 2.0 * s)
                };
                if w != 1.0 {
                    for l in 0..self.basis.ncols() {
                        self.basis[(c, l)] *= w;
                    }
                }
            }
        }
        self
    }

    pub fn without_bounds(mut self) -> Self {
        self.bounds = None;
        self
    }

    pub fn n_basis(&self) -> usize {
        self.basis.ncols()
    }

    /// `2N`.
    pub fn dim(&self) -> usize {
        2 * self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// FD steps `h·c_o` for speed coefficients, `h·ρ_o` for density.
    pub fn fd_steps(&self, h: f64) -> Vec<f64> {
        let n = self.n_basis();
        (0..2 * n)
            .map(|l| if l < n { h * self.c_o } else { h * self.rho_o })
            .collect()
    }

    /// Least-squares coefficients of `medium − reference` in the basis.
    pub fn project(&self, medium: &MediumModel) -> Vec<f64> {
        let svd = self.basis.clone().svd(true, true);
        let fit = |field: &[f64], reference: f64| -> Vec<f64> {
            let rhs = DVector::from_iterator(field.len(), field.iter().map(|v| v - reference));
            let sol = svd.solve(&rhs, 1e-10).expect("SVD with vectors");
            sol.iter().copied().collect()
        };
        let mut eta = fit(&medium.c, self.c_o);
        eta.extend(fit(&medium.rho, self.rho_o));
        eta
    }
}

/// Realized trial medium and the number of clamped cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Realized {
    pub medium: MediumModel,
    pub clamped: usize,
}

pub fn realize_medium(eta: &[f64], param: &Parameterization, grid: &Grid) -> Result<Realized> {
    let n = param.n_basis();
    if eta.len() != 2 * n {
        return Err(InversionError::Dimension(format!("eta has {} entries, expected {}", eta.len(), 2 * n)));
    }
    if param.basis.nrows() != grid.n_cells() {
        return Err(InversionError::Dimension("parameterization built for another grid".into()));
    }
    let ec = DVector::from_column_slice(&eta[..n]);
    let er = DVector::from_column_slice(&eta[n..]);
    let dc = &param.basis * ec;
    let dr = &param.basis * er;
    let mut c: Vec<f64> = dc.iter().map(|v| param.c_o + v).collect();
    let mut rho: Vec<f64> = dr.iter().map(|v| param.rho_o + v).collect();
    let mut clamped = 0;
    if let Some(b) = param.bounds {
        if !(b.c_min > 0.0 && b.rho_min > 0.0 && b.c_max >= b.c_min && b.rho_max >= b.rho_min) {
            return Err(InversionError::NonPositiveMedium(format!("bounds {b:?}")));
        }
        for v in c.iter_mut() {
            let w = v.clamp(b.c_min, b.c_max);
            clamped += usize::from(w != *v);
            *v = w;
        }
        for v in rho.iter_mut() {
            let w = v.clamp(b.rho_min, b.rho_max);
            clamped += usize::from(w != *v);
            *v = w;
        }
    }
    let medium = MediumModel::new(grid, c, rho, param.c_o, param.rho_o)
        .map_err(|e| InversionError::NonPositiveMedium(e.to_string()))?;
    Ok(Realized { medium, clamped })
}

/// A residual vector as a function of the parameters.
pub trait Residual: Sync {
    fn residual(&self, eta: &[f64]) -> Result<DVector<f64>>;

    fn value(&self, eta: &[f64]) -> Result<f64> {
        Ok(self.residual(eta)?.norm_squared())
    }
}

impl<F> Residual for F
where
    F: Fn(&[f64]) -> Result<DVector<f64>> + Sync,
{
    fn residual(&self, eta: &[f64]) -> Result<DVector<f64>> {
        self(eta)
    }
}

fn upper_entries(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            out.push(x[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

/// `‖[R(η)]_k [R]_k^{-1} − I‖_F²` over the upper triangle.
pub struct RomObjective<'a> {
    pub factor: &'a RomFactor,
    pub sim: &'a SimConfig,
    pub param: &'a Parameterization,
    pub k: usize,
    r_k: DMatrix<f64>,
}

impl<'a> RomObjective<'a> {
    pub fn new(factor: &'a RomFactor, sim: &'a SimConfig, param: &'a Parameterization, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(InversionError::InvalidConfig("layer index must be >= 1".into()));
        }
        let k = k.min(factor.rank);
        Ok(RomObjective {
            factor,
            sim,
            param,
            k,
            r_k: factor.r.leading(k).into_matrix(),
        })
    }

    pub fn residual_for(&self, r_eta: &BlockMatrix) -> DVector<f64> {
        let mut x = right_solve_upper(r_eta.matrix(), &self.r_k);
        for i in 0..x.nrows() {
            x[(i, i)] -= 1.0;
        }
        upper_entries(&x)
    }
}

impl Residual for RomObjective<'_> {
    fn residual(&self, eta: &[f64]) -> Result<DVector<f64>> {
        let medium = realize_medium(eta, self.param, &self.sim.grid)?.medium;
        let r_eta = guess_factor(&medium, self.factor, self.sim, Some(self.k))?;
        Ok(self.residual_for(&r_eta))
    }
}

/// Returns the objective value and its residual vector.
pub fn objective_rom(
    eta: &[f64],
    factor: &RomFactor,
    k: usize,
    sim: &SimConfig,
    param: &Parameterization,
) -> Result<(f64, DVector<f64>)> {
    let res = RomObjective::new(factor, sim, param, k)?.residual(eta)?;
    Ok((res.norm_squared(), res))
}

/// `Σ_{j=0}^{k} ‖Triu(D_j − D_j(η))‖_F²`.
pub struct FwiObjective<'a> {
    pub data: &'a DataMatrices,
    pub sim: &'a SimConfig,
    pub param: &'a Parameterization,
    pub k: usize,
}

impl<'a> FwiObjective<'a> {
    pub fn new(data: &'a DataMatrices, sim: &'a SimConfig, param: &'a Parameterization, k: usize) -> Result<Self> {
        if k > data.n_t() {
            return Err(InversionError::InvalidConfig(format!(
                "layer index {k} exceeds the {} recorded data steps",
                data.n_t()
            )));
        }
        Ok(FwiObjective { data, sim, param, k })
    }

    pub fn residual_for(&self, d_eta: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = Vec::new();
        for j in 0..=self.k {
            out.extend(upper_entries(&(&self.data.d[j] - &d_eta[j])).iter().copied());
        }
        DVector::from_vec(out)
    }
}

impl Residual for FwiObjective<'_> {
    fn residual(&self, eta: &[f64]) -> Result<DVector<f64>> {
        let medium = realize_medium(eta, self.param, &self.sim.grid)?.medium;
        let d = self.sim.correlations(&medium, self.k + 1)?;
        Ok(self.residual_for(&d))
    }
}

pub fn objective_fwi(
    eta: &[f64],
    data: &DataMatrices,
    k: usize,
    sim: &SimConfig,
    param: &Parameterization,
) -> Result<(f64, DVector<f64>)> {
    let res = FwiObjective::new(data, sim, param, k)?.residual(eta)?;
    Ok((res.norm_squared(), res))
}

/// Forward-difference Jacobian; column `l` uses step `steps[l]`.
pub fn fd_jacobian<R: Residual + ?Sized>(
    res: &R,
    eta: &[f64],
    base: &DVector<f64>,
    steps: &[f64],
) -> Result<DMatrix<f64>> {
    if steps.len() != eta.len() {
        return Err(InversionError::Dimension("one FD step per parameter".into()));
    }
    let column = |l: usize| -> Result<DVector<f64>> {
        let mut e = eta.to_vec();
        e[l] += steps[l];
        let r = res.residual(&e)?;
        if r.len() != base.len() {
            return Err(InversionError::Dimension("residual length changed".into()));
        }
        Ok((r - base) / steps[l])
    };
    #[cfg(feature = "parallel")]
    let cols: Vec<Result<DVector<f64>>> = (0..eta.len()).into_par_iter().map(column).collect();
    #[cfg(not(feature = "parallel"))]
    let cols: Vec<Result<DVector<f64>>> = (0..eta.len()).map(column).collect();
    let mut j = DMatrix::zeros(base.len(), eta.len());
    for (l, c) in cols.into_iter().enumerate() {
        j.set_column(l, &c?);
    }
    Ok(j)
}

/// `μ = σ_k²` for the first `σ_k < γσ_1`, else `σ_min²`, floored at 1e-30.
pub fn adaptive_mu_from_singular_values(sigma: &[f64], gamma: f64) -> f64 {
    let mut s: Vec<f64> = sigma.iter().map(|v| v.abs()).collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let Some(&top) = s.first() else { return 1e-30 };
    let pick = s.iter().copied().find(|&v| v < gamma * top).unwrap_or(*s.last().unwrap());
    (pick * pick).max(1e-30)
}

pub fn adaptive_mu(j: &DMatrix<f64>, gamma: f64) -> f64 {
    let sv = j.singular_values();
    adaptive_mu_from_singular_values(sv.as_slice(), gamma)
}

/// Singular values of `J` from the eigenvalues of `JᵀJ`.
fn singular_values_from_gram(jtj: &DMatrix<f64>) -> Vec<f64> {
    SymmetricEigen::new(jtj.clone())
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .collect()
}

/// Solves `(JᵀJ + μI)δ = −Jᵀr − μ·anchor`; on failure retries once with
/// `10μ`. Returns `δ` and the damping used.
pub fn solve_damped(
    jtj: &DMatrix<f64>,
    jtr: &DVector<f64>,
    anchor: Option<&[f64]>,
    mu: f64,
) -> Result<(DVector<f64>, f64)> {
    let n = jtj.nrows();
    let scale = (jtj.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let attempt = |mu: f64| -> Option<DVector<f64>> {
        let mut a = jtj.clone();
        for i in 0..n {
            a[(i, i)] += mu;
        }
        let chol = a.cholesky()?;
        let mut rhs = -jtr;
        if let Some(x) = anchor {
            for i in 0..n {
                rhs[i] -= mu * x[i];
            }
        }
        let d = chol.solve(&rhs);
        d.iter().all(|v| v.is_finite()).then_some(d)
    };
    if let Some(d) = attempt(mu) {
        return Ok((d, mu));
    }
    let retry = (10.0 * mu).max(1e-14 * scale);
    match attempt(retry) {
        Some(d) => Ok((d, retry)),
        None => Err(InversionError::SingularNormalEquations { mu: retry }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnStep {
    pub eta: Vec<f64>,
    pub delta: Vec<f64>,
    pub mu: f64,
}

/// One damped Gauss-Newton update with a fixed `μ`. With
/// `penalize_iterate` the damping acts on the new iterate (`μ‖η + δ‖²`),
/// otherwise on the step alone.
pub fn gauss_newton_step<R: Residual + ?Sized>(
    res: &R,
    eta: &[f64],
    mu: f64,
    steps: &[f64],
    penalize_iterate: bool,
) -> Result<GnStep> {
    let base = res.residual(eta)?;
    let j = fd_jacobian(res, eta, &base, steps)?;
    let jtj = j.transpose() * &j;
    let jtr = j.transpose() * &base;
    let anchor = penalize_iterate.then_some(eta);
    let (delta, mu) = solve_damped(&jtj, &jtr, anchor, mu)?;
    let new: Vec<f64> = eta.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
    Ok(GnStep {
        eta: new,
        delta: delta.iter().copied().collect(),
        mu,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Rom,
    Fwi,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Rom => "rom",
            Mode::Fwi => "fwi",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rom" => Ok(Mode::Rom),
            "fwi" => Ok(Mode::Fwi),
            _ => Err(format!("unknown mode `{s}` (expected rom or fwi)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionConfig {
    /// Layer indices `k_1 ≤ … ≤ k_ℓ`; empty means one layer at `n_t`.
    #[serde(default)]
    pub layers: Vec<usize>,
    /// Gauss-Newton iterations per layer.
    pub iterations: usize,
    /// Relative FD step.
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// Spectral cutoff for the damping rule.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Damp the iterate (`μ‖η‖²`) rather than the step.
    #[serde(default)]
    pub penalize_iterate: bool,
}

fn default_fd_step() -> f64 {
    1e-3
}

fn default_gamma() -> f64 {
    1e-3
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            layers: Vec::new(),
            iterations: 15,
            fd_step: default_fd_step(),
            gamma: default_gamma(),
            penalize_iterate: false,
        }
    }
}

impl InversionConfig {
    /// Layer indices for `n_t` steps, validated.
    pub fn schedule(&self, n_t: usize) -> Result<Vec<usize>> {
        if self.iterations == 0 {
            return Err(InversionError::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.layers.is_empty() {
            return Ok(vec![n_t]);
        }
        let ok = self.layers[0] >= 1
            && self.layers.windows(2).all(|w| w[0] <= w[1])
            && *self.layers.last().unwrap() == n_t;
        if !ok {
            return Err(InversionError::InvalidConfig(format!(
                "layers {:?} must be non-decreasing, start >= 1 and end at n_t = {n_t}",
                self.layers
            )));
        }
        Ok(self.layers.clone())
    }
}

/// One row of the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub layer: usize,
    pub k: usize,
    /// Objective at the new iterate.
    pub objective: f64,
    pub update_norm: f64,
    pub mu: f64,
    pub wall_time: f64,
    pub clamped: usize,
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub mode: Mode,
    /// Objective at `η = 0` for the first layer.
    pub initial_objective: f64,
    pub trajectory: Vec<IterationRecord>,
    pub eta: Vec<f64>,
    pub medium: MediumModel,
}

/// What the objectives are built from.
pub enum InversionData<'a> {
    Rom(&'a RomFactor),
    Fwi(&'a DataMatrices),
}

/// Layer-stripping Gauss-Newton from `η = 0`.
pub fn invert(
    config: &InversionConfig,
    data: InversionData<'_>,
    sim: &SimConfig,
    param: &Parameterization,
) -> Result<InversionResult> {
    let n_t = match &data {
        InversionData::Rom(f) => f.n_t,
        InversionData::Fwi(d) => d.n_t(),
    };
    let mode = match &data {
        InversionData::Rom(_) => Mode::Rom,
        InversionData::Fwi(_) => Mode::Fwi,
    };
    let layers = config.schedule(n_t)?;
    let steps = param.fd_steps(config.fd_step);
    let mut eta = vec![0.0; param.dim()];
    let mut trajectory = Vec::new();
    let start = Instant::now();
    let mut initial_objective = f64::NAN;
    let mut iteration = 0;
    for (li, &k_raw) in layers.iter().enumerate() {
        let objective: Box<dyn Residual + '_> = match &data {
            InversionData::Rom(f) => {
                if k_raw > f.rank {
                    log::warn!("layer index {k_raw} exceeds ROM rank {}, clipped", f.rank);
                }
                Box::new(RomObjective::new(f, sim, param, k_raw.min(f.rank))?)
            }
            InversionData::Fwi(d) => Box::new(FwiObjective::new(d, sim, param, k_raw)?),
        };
        let k = match &data {
            InversionData::Rom(f) => k_raw.min(f.rank),
            InversionData::Fwi(_) => k_raw,
        };
        let wrap = |iteration: usize| move |e: InversionError| InversionError::Iteration {
            iteration,
            source: Box::new(e),
        };
        let mut base = objective.residual(&eta).map_err(wrap(iteration + 1))?;
        if li == 0 {
            initial_objective = base.norm_squared();
        }
        for _ in 0..config.iterations {
            iteration += 1;
            let j = fd_jacobian(objective.as_ref(), &eta, &base, &steps).map_err(wrap(iteration))?;
            let jtj = j.transpose() * &j;
            let jtr = j.transpose() * &base;
            let sigma = if j.nrows() * j.ncols() <= 4_000_000 {
                j.singular_values().iter().copied().collect()
            } else {
                singular_values_from_gram(&jtj)
            };
            let mu = adaptive_mu_from_singular_values(&sigma, config.gamma);
            let anchor = config.penalize_iterate.then_some(eta.as_slice());
            let (delta, mu_used) = solve_damped(&jtj, &jtr, anchor, mu).map_err(wrap(iteration))?;
            for (e, d) in eta.iter_mut().zip(delta.iter()) {
                *e += d;
            }
            let realized = realize_medium(&eta, param, &sim.grid).map_err(wrap(iteration))?;
            if realized.clamped > 0 {
                log::info!("iteration {iteration}: {} cells clamped", realized.clamped);
            }
            base = objective.residual(&eta).map_err(wrap(iteration))?;
            let rec = IterationRecord {
                iteration,
                layer: li + 1,
                k,
                objective: base.norm_squared(),
                update_norm: delta.norm(),
                mu: mu_used,
                wall_time: start.elapsed().as_secs_f64(),
                clamped: realized.clamped,
            };
            log::debug!("{mode} {rec:?}");
            trajectory.push(rec);
        }
    }
    let medium = realize_medium(&eta, param, &sim.grid)?.medium;
    Ok(InversionResult {
        mode,
        initial_objective,
        trajectory,
        eta,
        medium,
    })
}

/// `‖(c̃, ρ̃) − (c, ρ)‖ / ‖(c − c_o, ρ − ρ_o)‖` over all cells.
pub fn relative_model_error(estimate: &MediumModel, truth: &MediumModel) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..truth.c.len() {
        num += (estimate.c[k] - truth.c[k]).powi(2) + (estimate.rho[k] - truth.rho[k]).powi(2);
        den += (truth.c[k] - truth.c_o).powi(2) + (truth.rho[k] - truth.rho_o).powi(2);
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Relative error of one field against its contrast.
pub fn relative_field_error(estimate: &[f64], truth: &[f64], reference: f64) -> f64 {
    let num: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth.iter().map(|b| (b - reference).powi(2)).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}
