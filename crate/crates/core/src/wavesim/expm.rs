//! Actions of `e^{−tL}` for skew-symmetric `L`.
//!
//! Two integrators are provided. The Krylov one builds an Arnoldi basis per
//! state and exponentiates the small Hessenberg matrix. The Chebyshev one
//! uses the Jacobi-Anger expansion
//!
//! ```text
//! e^{−tL} = J_0(tR) W_0 + 2 Σ_{k≥1} J_k(tR) W_k,
//! W_0 = I, W_1 = −L/R, W_{k+1} = −2(L/R) W_k + W_{k−1},
//! ```
//!
//! valid whenever the spectrum of `L` lies in `i[−R, R]`. Its coefficients
//! do not depend on the state, so one recurrence evaluates any weighted sum
//! of exponentials at several times.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::operator::LinearOperator;
use super::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Chebyshev,
    Krylov,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovOptions {
    pub tol: f64,
    pub max_dim: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        KrylovOptions {
            tol: 1e-10,
            max_dim: 60,
        }
    }
}

/// `J_0(z), …, J_kmax(z)` by Miller's backward recurrence, normalized with
/// `J_0 + 2 Σ J_{2k} = 1`.
pub fn bessel_j_sequence(z: f64, kmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; kmax + 1];
    if z == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let z = z.abs();
    let top = (kmax as f64).max(z);
    let mut n = (top + 20.0 + 6.0 * top.sqrt()).ceil() as usize;
    n += n % 2;
    let mut vals = vec![0.0; n + 2];
    vals[n] = 1e-30;
    for k in (1..=n).rev() {
        vals[k - 1] = 2.0 * k as f64 / z * vals[k] - vals[k + 1];
        if vals[k - 1].abs() > 1e200 {
            for v in vals[k - 1..].iter_mut() {
                *v *= 1e-200;
            }
        }
    }
    let mut norm = vals[0];
    for k in (2..=n).step_by(2) {
        norm += 2.0 * vals[k];
    }
    for k in 0..=kmax.min(n) {
        out[k] = vals[k] / norm;
    }
    out
}

/// Truncation degree: last `k` with `|J_k(z)| > 1e-17` for any `z` in `zs`.
fn coefficient_table(zs: &[f64]) -> Vec<Vec<f64>> {
    let zmax = zs.iter().fold(0.0f64, |a, &z| a.max(z.abs()));
    let kmax = (zmax + 25.0 + 8.0 * zmax.cbrt()).ceil() as usize;
    zs.iter().map(|&z| bessel_j_sequence(z, kmax)).collect()
}

fn truncated_len(coeffs: &[f64]) -> usize {
    let last = coeffs.iter().rposition(|c| c.abs() > 1e-17).unwrap_or(0);
    last + 1
}

/// Precomputed expansion of `Σ_i w_i e^{−t_i L}`.
#[derive(Debug, Clone)]
pub struct ChebyshevPropagator {
    radius: f64,
    /// `a_0 = Σ w J_0`, `a_k = 2 Σ w J_k`.
    coeffs: Vec<f64>,
}

impl ChebyshevPropagator {
    pub fn new(radius: f64, t: f64) -> Self {
        Self::combination(radius, &[t], &[1.0])
    }

    pub fn combination(radius: f64, times: &[f64], weights: &[f64]) -> Self {
        assert_eq!(times.len(), weights.len());
        let radius = if radius > 0.0 { radius } else { 1.0 };
        let zs: Vec<f64> = times.iter().map(|t| t * radius).collect();
        let table = coefficient_table(&zs);
        let len = table.first().map_or(1, |c| c.len());
        let mut coeffs = vec![0.0; len];
        for ((row, &w), &z) in table.iter().zip(weights).zip(&zs) {
            // J_k(−z) = (−1)^k J_k(z)
            let sign = if z < 0.0 { -1.0 } else { 1.0 };
            let mut s = 1.0;
            for (k, c) in row.iter().enumerate() {
                let f = if k == 0 { 1.0 } else { 2.0 };
                coeffs[k] += w * f * s * c;
                s *= sign;
            }
        }
        let n = truncated_len(&coeffs);
        coeffs.truncate(n.max(1));
        ChebyshevPropagator { radius, coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn apply<O: LinearOperator + ?Sized>(&self, op: &O, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * self.coeffs[0];
        if self.coeffs.len() == 1 {
            return out;
        }
        let inv_r = 1.0 / self.radius;
        let mut prev = x.clone();
        let mut cur = DMatrix::zeros(x.nrows(), x.ncols());
        op.apply_block(&prev, &mut cur);
        cur *= -inv_r;
        out.zip_apply(&cur, |a, b| *a += self.coeffs[1] * b);
        let mut tmp = DMatrix::zeros(x.nrows(), x.ncols());
        for &a in &self.coeffs[2..] {
            op.apply_block(&cur, &mut tmp);
            // prev <- −(2/R) L cur + prev, then swap roles
            {
                let p = prev.as_mut_slice();
                let t = tmp.as_slice();
                let o = out.as_mut_slice();
                for ((pv, tv), ov) in p.iter_mut().zip(t).zip(o.iter_mut()) {
                    *pv += -2.0 * inv_r * tv;
                    *ov += a * *pv;
                }
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        out
    }
}

/// `e^{−dt L} ψ` by Arnoldi with default options.
pub fn expm_step<O: LinearOperator + ?Sized>(op: &O, psi: &[f64], dt: f64) -> Result<Vec<f64>> {
    expm_step_with(op, psi, dt, &KrylovOptions::default())
}

/// Krylov evaluation of `e^{−dt L} ψ`. Stops when
/// `β h_{m+1,m} |e_mᵀ e^{−dt H_m} e_1| ≤ tol·β`.
pub fn expm_step_with<O: LinearOperator + ?Sized>(
    op: &O,
    psi: &[f64],
    dt: f64,
    opts: &KrylovOptions,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(SimError::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let n = op.dim();
    if psi.len() != n {
        return Err(SimError::ShapeMismatch(format!("state has {} entries, operator {}", psi.len(), n)));
    }
    let beta = psi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if beta == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let max_dim = opts.max_dim.min(n).max(1);
    let mut basis: Vec<Vec<f64>> = vec![psi.iter().map(|v| v / beta).collect()];
    let mut h = DMatrix::<f64>::zeros(max_dim + 1, max_dim);
    let mut w = vec![0.0; n];
    let scale = op.norm_bound().max(f64::MIN_POSITIVE);
    let mut estimate = f64::INFINITY;
    for j in 0..max_dim {
        op.apply(&basis[j], &mut w);
        for _ in 0..2 {
            for (i, v) in basis.iter().enumerate() {
                let c: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
                h[(i, j)] += c;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= c * vk;
                }
            }
        }
        let next = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        h[(j + 1, j)] = next;
        let m = j + 1;
        let hm = h.view((0, 0), (m, m)).into_owned();
        let e = (hm * (-dt)).exp();
        let happy = next <= 1e-14 * scale;
        estimate = if happy { 0.0 } else { next * e[(m - 1, 0)].abs() };
        if estimate <= opts.tol || m == n {
            let mut out = vec![0.0; n];
            for (k, v) in basis.iter().enumerate() {
                let c = beta * e[(k, 0)];
                for (o, vk) in out.iter_mut().zip(v) {
                    *o += c * vk;
                }
            }
            return Ok(out);
        }
        basis.push(w.iter().map(|v| v / next).collect());
    }
    Err(SimError::ConvergenceFailure {
        dim: max_dim,
        estimate,
    })
}

/// Fixed-step `e^{−dt L}` for blocks of states.
#[derive(Debug, Clone)]
pub struct Propagator {
    dt: f64,
    integrator: Integrator,
    krylov: KrylovOptions,
    chebyshev: Option<ChebyshevPropagator>,
}

impl Propagator {
    pub fn new<O: LinearOperator + ?Sized>(op: &O, dt: f64, integrator: Integrator) -> Self {
        let chebyshev = match integrator {
            Integrator::Chebyshev => Some(ChebyshevPropagator::new(op.norm_bound(), dt)),
            Integrator::Krylov => None,
        };
        Propagator {
            dt,
            integrator,
            krylov: KrylovOptions::default(),
            chebyshev,
        }
    }

    pub fn with_krylov_options(mut self, opts: KrylovOptions) -> Self {
        self.krylov = opts;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn integrator(&self) -> Integrator {
        self.integrator
    }

    pub fn step<O: LinearOperator + ?Sized>(&self, op: &O, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if let Some(ch) = &self.chebyshev {
            return Ok(ch.apply(op, x));
        }
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for (k, col) in x.column_iter().enumerate() {
            let v: Vec<f64> = col.iter().copied().collect();
            let r = expm_step_with(op, &v, self.dt, &self.krylov)?;
            out.set_column(k, &DVector::from_vec(r));
        }
        Ok(out)
    }
}

/// `Σ_i w_i e^{−t_i L} X`, all `t_i ≥ 0`.
pub(crate) fn exp_combination<O: LinearOperator + ?Sized>(
    op: &O,
    x: &DMatrix<f64>,
    times: &[f64],
    weights: &[f64],
    integrator: Integrator,
) -> Result<DMatrix<f64>> {
    match integrator {
        Integrator::Chebyshev => {
            Ok(ChebyshevPropagator::combination(op.norm_bound(), times, weights).apply(op, x))
        }
        Integrator::Krylov => {
            let mut out = DMatrix::zeros(x.nrows(), x.ncols());
            for (&t, &w) in times.iter().zip(weights) {
                if w == 0.0 {
                    continue;
                }
                let y = if t == 0.0 {
                    x.clone()
                } else {
                    Propagator::new(op, t, Integrator::Krylov).step(op, x)?
                };
                out.zip_apply(&y, |a, b| *a += w * b);
            }
            Ok(out)
        }
    }
}

/// `e^{−tL} X` for any `t ≥ 0`.
pub(crate) fn exp_action<O: LinearOperator + ?Sized>(
    op: &O,
    x: &DMatrix<f64>,
    t: f64,
    integrator: Integrator,
) -> Result<DMatrix<f64>> {
    if t == 0.0 {
        return Ok(x.clone());
    }
    Propagator::new(op, t, integrator).step(op, x)
}
