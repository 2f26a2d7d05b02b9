use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::expm::{exp_action, exp_combination, Integrator, Propagator};
use super::operator::LinearOperator;
use super::{Result, SimError};
use crate::acquisition::Pulse;
use crate::blockla::BlockMatrix;

/// How the forcing term is integrated while the source is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingScheme {
    /// `Σ_i τ_f s(t_i) e^{−(τ−t_i)L} F` over the nodes `t_i = iτ_f` in
    /// `[−t_s, t_s]`. Consistent with the recorded data to integrator
    /// accuracy.
    #[default]
    ExponentialQuadrature,
    /// `ψ_k = (I + τ_f L)^{-1}(ψ_{k−1} + τ_f s(t_k) F)` over the same
    /// nodes, then exact propagation to `τ`. First order in `τ_f`.
    BackwardEuler,
}

/// Source nodes `t_i = iτ_f`, `|t_i| ≤ t_s`, and weights `τ_f s(t_i)`.
pub fn source_nodes(pulse: &Pulse, tau_f: f64) -> (Vec<f64>, Vec<f64>) {
    let half = (pulse.t_s / tau_f + 1e-9).floor() as i64;
    let times: Vec<f64> = (-half..=half).map(|i| i as f64 * tau_f).collect();
    let weights = times.iter().map(|&t| tau_f * pulse.eval(t)).collect();
    (times, weights)
}

/// Snapshot `φ_0` at time `τ` for every force column of `forces`.
pub fn initial_state<O: LinearOperator + ?Sized>(
    op: &O,
    forces: &DMatrix<f64>,
    pulse: &Pulse,
    tau: f64,
    tau_f: f64,
) -> Result<DMatrix<f64>> {
    initial_state_with(
        op,
        forces,
        pulse,
        tau,
        tau_f,
        ForcingScheme::default(),
        Integrator::default(),
    )
}

pub fn initial_state_with<O: LinearOperator + ?Sized>(
    op: &O,
    forces: &DMatrix<f64>,
    pulse: &Pulse,
    tau: f64,
    tau_f: f64,
    scheme: ForcingScheme,
    integrator: Integrator,
) -> Result<DMatrix<f64>> {
    if tau < pulse.t_s {
        return Err(SimError::InvalidShift { tau, t_s: pulse.t_s });
    }
    if !(tau_f > 0.0) {
        return Err(SimError::InvalidArgument(format!("tau_f must be positive, got {tau_f}")));
    }
    if forces.nrows() != op.dim() {
        return Err(SimError::ShapeMismatch(format!(
            "force block has {} rows, operator {}",
            forces.nrows(),
            op.dim()
        )));
    }
    let (times, weights) = source_nodes(pulse, tau_f);
    match scheme {
        ForcingScheme::ExponentialQuadrature => {
            let delays: Vec<f64> = times.iter().map(|t| tau - t).collect();
            exp_combination(op, forces, &delays, &weights, integrator)
        }
        ForcingScheme::BackwardEuler => {
            let mut state = DMatrix::zeros(forces.nrows(), forces.ncols());
            for &w in &weights {
                state.zip_apply(forces, |a, b| *a += w * b);
                state = backward_euler_solve(op, &state, tau_f);
            }
            let last = *times.last().unwrap_or(&0.0);
            exp_action(op, &state, tau - last, integrator)
        }
    }
}

/// `(I + hL)^{-1} B` through `(I + hL)^{-1} = (I − hL)(I − h²L²)^{-1}`, the
/// inner SPD system solved by conjugate gradients per column.
fn backward_euler_solve<O: LinearOperator + ?Sized>(op: &O, rhs: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let n = op.dim();
    let mut out = DMatrix::zeros(n, rhs.ncols());
    let mut t1 = vec![0.0; n];
    let mut t2 = vec![0.0; n];
    // A v = v + h² LᵀL v = v − h² L(Lv)
    let apply_a = |v: &[f64], av: &mut [f64], t1: &mut [f64], t2: &mut [f64]| {
        op.apply(v, t1);
        op.apply(t1, t2);
        for k in 0..n {
            av[k] = v[k] - h * h * t2[k];
        }
    };
    for c in 0..rhs.ncols() {
        let b: Vec<f64> = rhs.column(c).iter().copied().collect();
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut y = vec![0.0; n];
        if bnorm > 0.0 {
            let mut r = b.clone();
            let mut p = r.clone();
            let mut ap = vec![0.0; n];
            let mut rr: f64 = r.iter().map(|v| v * v).sum();
            for _ in 0..(4 * n).max(50) {
                if rr.sqrt() <= 1e-15 * bnorm {
                    break;
                }
                apply_a(&p, &mut ap, &mut t1, &mut t2);
                let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
                for k in 0..n {
                    y[k] += alpha * p[k];
                    r[k] -= alpha * ap[k];
                }
                let rr_new: f64 = r.iter().map(|v| v * v).sum();
                let beta = rr_new / rr;
                rr = rr_new;
                for k in 0..n {
                    p[k] = r[k] + beta * p[k];
                }
            }
        }
        op.apply(&y, &mut t1);
        for k in 0..n {
            out[(k, c)] = y[k] - h * t1[k];
        }
    }
    out
}

/// Snapshots `φ_j = e^{−jΔt L} φ_0`, one `n_dof × n_E` block per level.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub states: Vec<DMatrix<f64>>,
    pub dt: f64,
    pub tau: f64,
    pub cell_area: f64,
}

impl SnapshotSet {
    pub fn n_levels(&self) -> usize {
        self.states.len()
    }

    pub fn n_excitations(&self) -> usize {
        self.states.first().map_or(0, |s| s.ncols())
    }

    /// `Σ_ε ‖φ_j^ε‖²`.
    pub fn energy(&self, j: usize) -> f64 {
        self.states[j].norm_squared()
    }
}

pub fn propagate_snapshots<O: LinearOperator + ?Sized>(
    op: &O,
    phi0: &DMatrix<f64>,
    n_levels: usize,
    dt: f64,
    tau: f64,
    integrator: Integrator,
    cell_area: f64,
) -> Result<SnapshotSet> {
    if n_levels == 0 {
        return Err(SimError::InsufficientSnapshots { needed: 1, got: 0 });
    }
    let mut states = Vec::with_capacity(n_levels);
    states.push(phi0.clone());
    if n_levels > 1 {
        let prop = Propagator::new(op, dt, integrator);
        for j in 1..n_levels {
            let next = prop.step(op, &states[j - 1])?;
            states.push(next);
        }
    }
    Ok(SnapshotSet {
        states,
        dt,
        tau,
        cell_area,
    })
}

/// Brute-force mass `M_{j,l} = ⟨φ_j, φ_l⟩` and stiffness
/// `S_{j,l} = ⟨φ_j, φ_{l+1}⟩` from `n_t + 1` snapshot levels.
pub fn snapshot_gram(set: &SnapshotSet) -> Result<(BlockMatrix, BlockMatrix)> {
    let levels = set.n_levels();
    if levels < 2 {
        return Err(SimError::InsufficientSnapshots { needed: 2, got: levels });
    }
    let n_t = levels - 1;
    let m = set.n_excitations();
    let w = set.cell_area;
    let mut mass = DMatrix::zeros(n_t * m, n_t * m);
    let mut stiff = DMatrix::zeros(n_t * m, n_t * m);
    for j in 0..n_t {
        let pj = &set.states[j];
        for l in j..n_t {
            let blk = pj.transpose() * &set.states[l] * w;
            mass.view_mut((j * m, l * m), (m, m)).copy_from(&blk);
            mass.view_mut((l * m, j * m), (m, m)).copy_from(&blk.transpose());
        }
        for l in 0..n_t {
            let blk = pj.transpose() * &set.states[l + 1] * w;
            stiff.view_mut((j * m, l * m), (m, m)).copy_from(&blk);
        }
    }
    let mass = BlockMatrix::new(mass, m).map_err(|e| SimError::ShapeMismatch(e.to_string()))?;
    let stiff = BlockMatrix::new(stiff, m).map_err(|e| SimError::ShapeMismatch(e.to_string()))?;
    Ok((mass, stiff))
}

/// `⟨φ_0, φ_j⟩` for every stored level.
pub fn snapshot_correlations(set: &SnapshotSet) -> Vec<DMatrix<f64>> {
    let p0t = set.states[0].transpose();
    set.states.iter().map(|s| &p0t * s * set.cell_area).collect()
}
