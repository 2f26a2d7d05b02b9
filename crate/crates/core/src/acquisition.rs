//! Probing pulse, point-like sources, array response and data matrices.
//!
//! Time is sampled on a fine grid `t_n = nτ_f` with `τ_f = Δt / substeps`.
//! The source is active on the nodes `|t_n| ≤ t_s`. The field at node `n`
//! is the running sum
//!
//! ```text
//! χ_n = e^{−τ_f L} χ_{n−1} + τ_f s(t_n) F,    ψ_n = χ_n − ½ τ_f s(t_n) F,
//! ```
//!
//! and the raw trace is `Ã_n = ⟨F_{ε′}, ψ_ε(t_n)⟩`. The array response is
//! `A(t_m) = Σ_i τ_f s(t_i) Ã_{m+i}`, and the data matrices
//! `D_j = A(jΔt) + A(−jΔt)ᵀ` then equal the snapshot correlations
//! `⟨φ_0, φ_j⟩` up to integrator accuracy, for every shift `τ ≥ t_s`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wavesim::{
    assemble_operator, source_nodes, Grid, Integrator, LinearOperator, MediumModel, Propagator, SimError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AcqError {
    #[error("sensor {index} at ({x}, {y}) km is outside the domain")]
    SensorOutsideDomain { index: usize, x: f64, y: f64 },
    #[error("medium differs from the reference near sensor {index} (cell {cell}: c = {c}, rho = {rho})")]
    ReferenceMismatch { index: usize, cell: usize, c: f64, rho: f64 },
    #[error("data step {dt} is not a multiple of the fine step {tau_f}")]
    Misalignment { dt: f64, tau_f: f64 },
    #[error("record covers {have} data steps, {need} requested")]
    InsufficientRecord { have: usize, need: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub type Result<T> = std::result::Result<T, AcqError>;

/// `s(t) = 1_{[−t_s, t_s]}(t) d/dt[cos(2πνt) exp(−(2πB)² t² / 2)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    /// Central frequency, Hz.
    pub nu: f64,
    /// Bandwidth, Hz.
    pub bandwidth: f64,
    /// Half support, s.
    pub t_s: f64,
}

impl Default for Pulse {
    fn default() -> Self {
        Pulse::new(6.0, 4.0)
    }
}

impl Pulse {
    /// Pulse with the default half support `1.5/(ν + B)`.
    pub fn new(nu: f64, bandwidth: f64) -> Self {
        Pulse {
            nu,
            bandwidth,
            t_s: 1.5 / (nu + bandwidth),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.bandwidth > 0.0 && self.t_s > 0.0) {
            return Err(AcqError::InvalidArgument(format!("bad pulse {self:?}")));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t.abs() > self.t_s {
            return 0.0;
        }
        let w = 2.0 * std::f64::consts::PI * self.nu;
        let a = (2.0 * std::f64::consts::PI * self.bandwidth).powi(2);
        let g = (-0.5 * a * t * t).exp();
        -(w * (w * t).sin() + a * t * (w * t).cos()) * g
    }

    /// Data sampling interval `1 / (2.3(ν + B))`.
    pub fn default_dt(&self) -> f64 {
        1.0 / (2.3 * (self.nu + self.bandwidth))
    }
}

/// Co-located sources and receivers with two polarizations each.
/// Excitation `ε = 2·sensor + polarization`, polarization 0 acts on `u_x`
/// and 1 on `u_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceArray {
    pub positions: Vec<(f64, f64)>,
    /// Gaussian width in km; one grid cell when absent.
    pub sigma: Option<f64>,
}

impl SourceArray {
    pub fn new(positions: Vec<(f64, f64)>) -> Self {
        SourceArray { positions, sigma: None }
    }

    /// `n` sensors evenly spaced on `[x_start, x_end]` at `depth`.
    pub fn line(n: usize, x_start: f64, x_end: f64, depth: f64) -> Self {
        let positions = if n == 1 {
            vec![(0.5 * (x_start + x_end), depth)]
        } else {
            (0..n)
                .map(|k| (x_start + (x_end - x_start) * k as f64 / (n - 1) as f64, depth))
                .collect()
        };
        Self::new(positions)
    }

    pub fn n_sensors(&self) -> usize {
        self.positions.len()
    }

    pub fn n_excitations(&self) -> usize {
        2 * self.positions.len()
    }

    pub fn sigma_on(&self, grid: &Grid) -> f64 {
        self.sigma.unwrap_or(grid.hx.max(grid.hy))
    }
}

/// Force block of excitation `eps` as a full state vector: a truncated
/// Gaussian on the faces of the chosen velocity component, scaled so that
/// `hx·hy·ΣF = 1`.
pub fn build_source(array: &SourceArray, grid: &Grid, eps: usize) -> Result<Vec<f64>> {
    let sensor = eps / 2;
    let pol = eps % 2;
    let &(xs, ys) = array
        .positions
        .get(sensor)
        .ok_or_else(|| AcqError::InvalidArgument(format!("excitation {eps} out of range")))?;
    if !grid.contains(xs, ys) {
        return Err(AcqError::SensorOutsideDomain { index: sensor, x: xs, y: ys });
    }
    let sigma = array.sigma_on(grid);
    let cut2 = (3.0 * sigma).powi(2);
    let mut f = vec![0.0; grid.n_dof()];
    let mut total = 0.0;
    let mut put = |k: usize, (x, y): (f64, f64)| {
        let r2 = (x - xs).powi(2) + (y - ys).powi(2);
        if r2 <= cut2 * (1.0 + 1e-9) {
            let v = (-r2 / (2.0 * sigma * sigma)).exp();
            f[k] = v;
            total += v;
        }
    };
    if pol == 0 {
        for j in 0..grid.ny {
            for i in 0..=grid.nx {
                put(i + (grid.nx + 1) * j, grid.ux_face(i, j));
            }
        }
    } else {
        let off = grid.uy_offset();
        for j in 0..=grid.ny {
            for i in 0..grid.nx {
                put(off + i + grid.nx * j, grid.uy_face(i, j));
            }
        }
    }
    if total == 0.0 {
        return Err(AcqError::InvalidArgument(format!(
            "source {sensor} support misses every face (sigma {sigma})"
        )));
    }
    let scale = 1.0 / (total * grid.cell_area());
    for v in f.iter_mut() {
        *v *= scale;
    }
    Ok(f)
}

/// All force blocks as columns, `n_dof × n_E`.
pub fn build_forces(array: &SourceArray, grid: &Grid) -> Result<DMatrix<f64>> {
    let n_e = array.n_excitations();
    let mut m = DMatrix::zeros(grid.n_dof(), n_e);
    for eps in 0..n_e {
        let f = build_source(array, grid, eps)?;
        m.set_column(eps, &nalgebra::DVector::from_vec(f));
    }
    Ok(m)
}

/// Cells touched by the support of any force of `sensor`.
pub fn support_cells(array: &SourceArray, grid: &Grid, sensor: usize) -> Vec<usize> {
    let (xs, ys) = array.positions[sensor];
    let reach = 3.0 * array.sigma_on(grid) + grid.hx.max(grid.hy);
    let mut cells = Vec::new();
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x, y) = grid.cell_center(i, j);
            if (x - xs).abs() <= reach && (y - ys).abs() <= reach {
                cells.push(grid.cell(i, j));
            }
        }
    }
    cells
}

/// The medium must equal `(c_o, ρ_o)` wherever a source acts.
pub fn check_reference(array: &SourceArray, grid: &Grid, medium: &MediumModel) -> Result<()> {
    for (index, &(x, y)) in array.positions.iter().enumerate() {
        if !grid.contains(x, y) {
            return Err(AcqError::SensorOutsideDomain { index, x, y });
        }
        for cell in support_cells(array, grid, index) {
            let (c, rho) = (medium.c[cell], medium.rho[cell]);
            if (c - medium.c_o).abs() > 1e-12 || (rho - medium.rho_o).abs() > 1e-12 {
                return Err(AcqError::ReferenceMismatch { index, cell, c, rho });
            }
        }
    }
    Ok(())
}

/// Sampling of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    /// Data interval Δt, s.
    pub dt: f64,
    /// Fine steps per data interval.
    pub substeps: usize,
    /// Number of snapshots; data are recorded up to `t = n_t·Δt`.
    pub n_t: usize,
}

impl Sampling {
    pub fn for_pulse(pulse: &Pulse, n_t: usize) -> Self {
        Sampling {
            dt: pulse.default_dt(),
            substeps: 10,
            n_t,
        }
    }

    pub fn tau_f(&self) -> f64 {
        self.dt / self.substeps as f64
    }
}

/// Noise added to the raw trace.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub level: f64,
    pub seed: u64,
    /// Samples on fine nodes `first..first + samples.len()`.
    pub first: i64,
    pub samples: Vec<DMatrix<f64>>,
}

/// Raw traces and array response on the fine grid.
#[derive(Debug, Clone)]
pub struct ResponseRecord {
    pub pulse: Pulse,
    pub sampling: Sampling,
    /// Index of the first source node, `−I`.
    pub source_first: i64,
    /// Source node weights `τ_f s(t_i)`, `i = −I..=I`.
    pub source_weights: Vec<f64>,
    /// Clean raw trace `Ã_n` for `n = trace_first..`.
    pub trace_first: i64,
    pub trace: Vec<DMatrix<f64>>,
    /// Clean response `A(t_m)` for `m = response_first..`.
    pub response_first: i64,
    pub response: Vec<DMatrix<f64>>,
    pub noise: Option<NoiseRealization>,
}

impl ResponseRecord {
    pub fn n_excitations(&self) -> usize {
        self.trace[0].nrows()
    }

    pub fn tau_f(&self) -> f64 {
        self.sampling.tau_f()
    }

    /// `Ã_n`, zero outside the recorded window.
    pub fn trace_at(&self, n: i64) -> DMatrix<f64> {
        let k = n - self.trace_first;
        if k < 0 || k as usize >= self.trace.len() {
            let e = self.n_excitations();
            return DMatrix::zeros(e, e);
        }
        self.trace[k as usize].clone()
    }

    /// Clean `A(t_m)`.
    pub fn response_at(&self, m: i64) -> Option<&DMatrix<f64>> {
        let k = m - self.response_first;
        if k < 0 {
            return None;
        }
        self.response.get(k as usize)
    }

    pub fn response_times(&self) -> Vec<f64> {
        let tf = self.tau_f();
        (0..self.response.len())
            .map(|k| (self.response_first + k as i64) as f64 * tf)
            .collect()
    }

    /// `Σ_i τ_f s(t_i) N_{m+i}`.
    fn noise_response(&self, m: i64) -> Option<DMatrix<f64>> {
        let noise = self.noise.as_ref()?;
        let e = self.n_excitations();
        let mut out = DMatrix::zeros(e, e);
        for (k, w) in self.source_weights.iter().enumerate() {
            let n = m + self.source_first + k as i64 - noise.first;
            if n >= 0 && (n as usize) < noise.samples.len() {
                out.zip_apply(&noise.samples[n as usize], |a, b| *a += *w * b);
            }
        }
        Some(out)
    }

    /// `A(t_m)` including noise when present.
    pub fn noisy_response_at(&self, m: i64) -> Option<DMatrix<f64>> {
        let mut a = self.response_at(m)?.clone();
        if let Some(n) = self.noise_response(m) {
            a += n;
        }
        Some(a)
    }

    /// `‖∫_0^{t_max} ‖N‖² ‖^{1/2} / ‖∫_0^{t_max} ‖Ã‖² ‖^{1/2}` by the trapezoidal rule.
    pub fn noise_ratio(&self) -> f64 {
        let Some(noise) = &self.noise else { return 0.0 };
        let last = (self.sampling.n_t * self.sampling.substeps) as i64;
        let nsum = trapezoid(0, last, |n| {
            let k = n - noise.first;
            noise.samples[k as usize].norm_squared()
        });
        let asum = trapezoid(0, last, |n| self.trace_at(n).norm_squared());
        (nsum / asum).sqrt()
    }
}

fn trapezoid(first: i64, last: i64, f: impl Fn(i64) -> f64) -> f64 {
    (first..=last)
        .map(|n| {
            let w = if n == first || n == last { 0.5 } else { 1.0 };
            w * f(n)
        })
        .sum()
}

/// Simulates every excitation in `medium` and records traces and response
/// for `t ∈ [−2t_s, n_t·Δt + t_s]`.
pub fn record_response(
    medium: &MediumModel,
    grid: &Grid,
    array: &SourceArray,
    pulse: &Pulse,
    sampling: &Sampling,
    integrator: Integrator,
) -> Result<ResponseRecord> {
    pulse.validate()?;
    if sampling.substeps == 0 || !(sampling.dt > 0.0) || sampling.n_t == 0 {
        return Err(AcqError::InvalidArgument(format!("bad sampling {sampling:?}")));
    }
    check_reference(array, grid, medium)?;
    let op = assemble_operator(medium, grid)?;
    let forces = build_forces(array, grid)?;
    let tau_f = sampling.tau_f();
    let (_, weights) = source_nodes(pulse, tau_f);
    let half = (weights.len() / 2) as i64;
    let resp_first = -2 * half;
    let resp_last = (sampling.n_t * sampling.substeps) as i64 + half;
    let trace_first = -half;
    let trace_last = resp_last + half;

    let prop = Propagator::new(&op, tau_f, integrator);
    let area = grid.cell_area();
    let ft = forces.transpose();
    let mut chi = DMatrix::zeros(op.dim(), forces.ncols());
    let mut trace = Vec::with_capacity((trace_last - trace_first + 1) as usize);
    for n in trace_first..=trace_last {
        let w = if n.abs() <= half {
            weights[(n + half) as usize]
        } else {
            0.0
        };
        if n > trace_first {
            chi = prop.step(&op, &chi)?;
        }
        if w != 0.0 {
            chi.zip_apply(&forces, |a, b| *a += w * b);
        }
        let mut y = &ft * &chi;
        if w != 0.0 {
            y -= (&ft * &forces) * (0.5 * w);
        }
        trace.push(y * area);
    }

    let mut rec = ResponseRecord {
        pulse: *pulse,
        sampling: *sampling,
        source_first: -half,
        source_weights: weights,
        trace_first,
        trace,
        response_first: resp_first,
        response: Vec::new(),
        noise: None,
    };
    rec.response = (resp_first..=resp_last)
        .map(|m| convolve(&rec, m))
        .collect();
    Ok(rec)
}

fn convolve(rec: &ResponseRecord, m: i64) -> DMatrix<f64> {
    let e = rec.n_excitations();
    let mut out = DMatrix::zeros(e, e);
    for (k, w) in rec.source_weights.iter().enumerate() {
        let n = m + rec.source_first + k as i64 - rec.trace_first;
        if n >= 0 && (n as usize) < rec.trace.len() {
            out.zip_apply(&rec.trace[n as usize], |a, b| *a += *w * b);
        }
    }
    out
}

/// `D_0, …, D_{n_t}` and their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    pub d: Vec<DMatrix<f64>>,
    pub dt: f64,
    pub noise_level: f64,
}

impl DataMatrices {
    pub fn n_excitations(&self) -> usize {
        self.d[0].nrows()
    }

    /// Number of snapshots the data support (`d.len() − 1`).
    pub fn n_t(&self) -> usize {
        self.d.len() - 1
    }

    pub fn truncated(&self, n_t: usize) -> DataMatrices {
        DataMatrices {
            d: self.d[..=n_t].to_vec(),
            dt: self.dt,
            noise_level: self.noise_level,
        }
    }
}

/// `D_j = A(t_j) + A(−t_j)ᵀ` for `j = 0..=n_t`, with noise entering through
/// the first term only.
pub fn data_matrices(rec: &ResponseRecord, dt: f64, n_t: usize) -> Result<DataMatrices> {
    let tau_f = rec.tau_f();
    let ratio = dt / tau_f;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
        return Err(AcqError::Misalignment { dt, tau_f });
    }
    let k = k as i64;
    let have = ((rec.response_first + rec.response.len() as i64 - 1) / k) as usize;
    if n_t > have {
        return Err(AcqError::InsufficientRecord { have, need: n_t });
    }
    let e = rec.n_excitations();
    let mut d = Vec::with_capacity(n_t + 1);
    for j in 0..=n_t as i64 {
        let m = j * k;
        let mut dj = rec
            .noisy_response_at(m)
            .expect("positive times are recorded");
        match rec.response_at(-m) {
            Some(back) => dj += back.transpose(),
            None => debug_assert!(e > 0),
        }
        d.push(dj);
    }
    Ok(DataMatrices {
        d,
        dt,
        noise_level: rec.noise.as_ref().map_or(0.0, |n| n.level),
    })
}

/// Adds Gaussian noise to the raw trace on `[−t_s, n_t·Δt + t_s]`, scaled so
/// that the trapezoidal energy ratio over `[0, n_t·Δt]` is exactly `b`.
pub fn add_noise(rec: &ResponseRecord, b: f64, seed: u64) -> Result<ResponseRecord> {
    if !(b >= 0.0) || !b.is_finite() {
        return Err(AcqError::InvalidArgument(format!("noise level must be >= 0, got {b}")));
    }
    let mut out = rec.clone();
    if b == 0.0 {
        out.noise = None;
        return Ok(out);
    }
    let e = rec.n_excitations();
    let half = -rec.source_first;
    let first = -half;
    let last = (rec.sampling.n_t * rec.sampling.substeps) as i64 + half;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples: Vec<DMatrix<f64>> = (first..=last)
        .map(|_| DMatrix::from_fn(e, e, |_, _| StandardNormal.sample(&mut rng)))
        .collect();
    let t_last = (rec.sampling.n_t * rec.sampling.substeps) as i64;
    let nsum = trapezoid(0, t_last, |n| samples[(n - first) as usize].norm_squared());
    let asum = trapezoid(0, t_last, |n| rec.trace_at(n).norm_squared());
    let scale = b * (asum / nsum).sqrt();
    for s in samples.iter_mut() {
        *s *= scale;
    }
    out.noise = Some(NoiseRealization {
        level: b,
        seed,
        first,
        samples,
    });
    Ok(out)
}
