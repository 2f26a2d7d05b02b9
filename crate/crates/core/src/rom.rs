//! Reduced order models assembled from data matrices.
//!
//! With `n_t` snapshots and `m` excitations the mass and stiffness matrices
//! are `n_t × n_t` block Toeplitz-like arrangements of `D_0, …, D_{n_t}`.
//! [`build_rom`] returns the Cholesky factor `R` (block columns are the ROM
//! snapshots), the propagator `P` and the projection `Π`.
//!
//! At full rank (`r = n_t`) no regularization is applied: `Π = I`,
//! `R = chol(M)` and `P = R^{-T} S R^{-1}`. Below full rank the leading
//! eigenspace of `M` is kept and the propagator is put back in block upper
//! Hessenberg form by block Arnoldi.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{build_forces, check_reference, AcqError, DataMatrices, Pulse, Sampling, SourceArray};
use crate::blockla::{
    block_arnoldi, block_cholesky, right_solve_upper, spectral_truncate, symmetrize, threshold_rank, BlockMatrix,
    LinalgError, TallBlockMatrix,
};
use crate::wavesim::{
    assemble_operator, initial_state_with, propagate_snapshots, snapshot_correlations, ForcingScheme, Grid,
    Integrator, MediumModel, SimError, SnapshotSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    DataTruncation,
    DataArnoldi,
    DataCholesky,
    GuessCholesky,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::DataTruncation => "data ROM: spectral truncation",
            Stage::DataArnoldi => "data ROM: block Arnoldi",
            Stage::DataCholesky => "data ROM: Cholesky",
            Stage::GuessCholesky => "guess ROM: Cholesky",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RomError {
    #[error("need data matrices D_0..D_{need}, got D_0..D_{have}")]
    InsufficientData { need: usize, have: usize },
    #[error("{stage}: {source}")]
    Linalg {
        stage: Stage,
        #[source]
        source: LinalgError,
    },
    #[error("forward solve: {0}")]
    Sim(#[from] SimError),
    #[error("acquisition: {0}")]
    Acq(#[from] AcqError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, RomError>;

fn staged(stage: Stage) -> impl Fn(LinalgError) -> RomError {
    move |source| RomError::Linalg { stage, source }
}

fn check_blocks(d: &[DMatrix<f64>], need: usize) -> Result<usize> {
    if d.len() <= need {
        return Err(RomError::InsufficientData {
            need,
            have: d.len().saturating_sub(1),
        });
    }
    let m = d[0].nrows();
    if m == 0 || d.iter().any(|x| x.shape() != (m, m)) {
        return Err(RomError::InvalidArgument("data matrices must share a square shape".into()));
    }
    Ok(m)
}

/// Block Toeplitz mass before symmetrization: `M_{j,l} = D_{l−j}` for
/// `j ≤ l`, `D_{j−l}ᵀ` below the diagonal.
pub fn assemble_mass_raw(d: &[DMatrix<f64>], n_t: usize) -> Result<BlockMatrix> {
    if n_t == 0 {
        return Err(RomError::InvalidArgument("n_t must be positive".into()));
    }
    let m = check_blocks(d, n_t - 1)?;
    let mut out = DMatrix::zeros(n_t * m, n_t * m);
    for j in 0..n_t {
        for l in 0..n_t {
            let blk = if j <= l { d[l - j].clone() } else { d[j - l].transpose() };
            out.view_mut((j * m, l * m), (m, m)).copy_from(&blk);
        }
    }
    BlockMatrix::new(out, m).map_err(|e| RomError::InvalidArgument(e.to_string()))
}

pub fn assemble_mass(d: &[DMatrix<f64>], n_t: usize) -> Result<BlockMatrix> {
    Ok(symmetrize(&assemble_mass_raw(d, n_t)?))
}

/// `S_{j,l} = D_{l+1−j}` for `j ≤ l + 1`, `D_{j−1−l}ᵀ` otherwise.
pub fn assemble_stiffness(d: &[DMatrix<f64>], n_t: usize) -> Result<BlockMatrix> {
    if n_t == 0 {
        return Err(RomError::InvalidArgument("n_t must be positive".into()));
    }
    let m = check_blocks(d, n_t)?;
    let mut out = DMatrix::zeros(n_t * m, n_t * m);
    for j in 0..n_t {
        for l in 0..n_t {
            let blk = if j <= l + 1 {
                d[l + 1 - j].clone()
            } else {
                d[j - 1 - l].transpose()
            };
            out.view_mut((j * m, l * m), (m, m)).copy_from(&blk);
        }
    }
    BlockMatrix::new(out, m).map_err(|e| RomError::InvalidArgument(e.to_string()))
}

/// Default truncation rank: largest `r` with `λ_{r·m} ≥ δλ_1`, `δ = 1e-6`
/// for clean data and `(b/2)²` for noise level `b`.
pub fn auto_rank(mass: &BlockMatrix, noise_level: f64) -> usize {
    let delta = if noise_level > 0.0 {
        (noise_level / 2.0).powi(2)
    } else {
        1e-6
    };
    threshold_rank(mass, delta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RomFactor {
    /// Upper triangular, `r·m` square.
    pub r: BlockMatrix,
    /// Block upper Hessenberg propagator.
    pub p: BlockMatrix,
    /// `n_t·m × r·m` projection; the identity at full rank.
    pub pi: DMatrix<f64>,
    pub rank: usize,
    pub n_t: usize,
}

impl RomFactor {
    pub fn block_size(&self) -> usize {
        self.r.block_size()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.n_t
    }
}

pub fn build_rom(mass: &BlockMatrix, stiffness: &BlockMatrix, rank: usize) -> Result<RomFactor> {
    let n_t = mass.n_blocks();
    let m = mass.block_size();
    if stiffness.block_size() != m || stiffness.n_blocks() != n_t {
        return Err(RomError::InvalidArgument("mass and stiffness shapes differ".into()));
    }
    if rank == 0 || rank > n_t {
        return Err(RomError::Linalg {
            stage: Stage::DataTruncation,
            source: LinalgError::Shape(format!("rank {rank} outside 1..={n_t}")),
        });
    }
    if rank == n_t {
        let r = block_cholesky(mass).map_err(staged(Stage::DataCholesky))?;
        let x = right_solve_upper(stiffness.matrix(), r.matrix());
        let p = r
            .matrix()
            .tr_solve_upper_triangular(&x)
            .expect("Cholesky factor has a positive diagonal");
        return Ok(RomFactor {
            r,
            p: BlockMatrix::new(p, m).expect("square"),
            pi: DMatrix::identity(n_t * m, n_t * m),
            rank,
            n_t,
        });
    }

    let tr = spectral_truncate(mass, rank).map_err(staged(Stage::DataTruncation))?;
    let z = &tr.eigenvectors;
    let sqrt_l = tr.eigenvalues.map(f64::sqrt);
    let inv_sqrt_l = sqrt_l.map(|v| 1.0 / v);
    let s_r = z.transpose() * stiffness.matrix() * z;
    let p_r = DMatrix::from_fn(s_r.nrows(), s_r.ncols(), |i, k| inv_sqrt_l[i] * s_r[(i, k)] * inv_sqrt_l[k]);
    let p_r = BlockMatrix::new(p_r, m).expect("square");
    let z0 = z.rows(0, m);
    let y = DMatrix::from_fn(rank * m, m, |i, k| sqrt_l[i] * z0[(k, i)]);
    let y = TallBlockMatrix::new(y).map_err(staged(Stage::DataArnoldi))?;
    let q = block_arnoldi(&p_r, &y).map_err(staged(Stage::DataArnoldi))?;
    let qm = q.matrix();
    let lam_q = DMatrix::from_fn(rank * m, rank * m, |i, k| tr.eigenvalues[i] * qm[(i, k)]);
    let gram = BlockMatrix::new(qm.transpose() * lam_q, m).expect("square");
    let r = block_cholesky(&symmetrize(&gram)).map_err(staged(Stage::DataCholesky))?;
    let p = qm.transpose() * p_r.matrix() * qm;
    Ok(RomFactor {
        r,
        p: BlockMatrix::new(p, m).expect("square"),
        pi: z * qm,
        rank,
        n_t,
    })
}

/// `φ_j^ROM` for `j = 0..count`: block columns of `R`, extended by the
/// propagator once they run out.
pub fn rom_snapshots(f: &RomFactor, count: usize) -> Vec<DMatrix<f64>> {
    let m = f.block_size();
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(count);
    for j in 0..count {
        if j < f.rank {
            out.push(f.r.matrix().columns(j * m, m).into_owned());
        } else {
            let next = f.p.matrix() * &out[j - 1];
            out.push(next);
        }
    }
    out
}

/// Everything needed to simulate data in a trial medium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub grid: Grid,
    pub array: SourceArray,
    pub pulse: Pulse,
    pub sampling: Sampling,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub scheme: ForcingScheme,
    /// Shift of the first snapshot; `t_s` when absent.
    #[serde(default)]
    pub tau: Option<f64>,
}

impl SimConfig {
    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(self.pulse.t_s)
    }

    /// Snapshots `φ_0, …, φ_{levels−1}` in `medium`.
    pub fn snapshots(&self, medium: &MediumModel, levels: usize) -> Result<SnapshotSet> {
        check_reference(&self.array, &self.grid, medium)?;
        let op = assemble_operator(medium, &self.grid)?;
        let forces = build_forces(&self.array, &self.grid)?;
        let phi0 = initial_state_with(
            &op,
            &forces,
            &self.pulse,
            self.tau(),
            self.sampling.tau_f(),
            self.scheme,
            self.integrator,
        )?;
        Ok(propagate_snapshots(
            &op,
            &phi0,
            levels,
            self.sampling.dt,
            self.tau(),
            self.integrator,
            self.grid.cell_area(),
        )?)
    }

    /// `⟨φ_0, φ_j⟩` for `j = 0..levels`. Equal to the data matrices the
    /// acquisition pipeline records in the same medium.
    pub fn correlations(&self, medium: &MediumModel, levels: usize) -> Result<Vec<DMatrix<f64>>> {
        Ok(snapshot_correlations(&self.snapshots(medium, levels)?))
    }

    pub fn data(&self, medium: &MediumModel) -> Result<DataMatrices> {
        Ok(DataMatrices {
            d: self.correlations(medium, self.sampling.n_t + 1)?,
            dt: self.sampling.dt,
            noise_level: 0.0,
        })
    }
}

/// `R(η)` with `ΠᵀM(η)Π = R(η)ᵀR(η)`, or its leading `k` block rows and
/// columns. At full rank only `D_0(η)..D_{k−1}(η)` are simulated.
pub fn guess_factor(medium: &MediumModel, f: &RomFactor, sim: &SimConfig, k: Option<usize>) -> Result<BlockMatrix> {
    let k = k.unwrap_or(f.rank).clamp(1, f.rank);
    if f.is_full_rank() {
        let d = sim.correlations(medium, k)?;
        let mass = assemble_mass(&d, k)?;
        return block_cholesky(&mass).map_err(staged(Stage::GuessCholesky));
    }
    let d = sim.correlations(medium, f.n_t)?;
    guess_factor_from_correlations(&d, f, Some(k))
}

/// As [`guess_factor`] with precomputed `D_j(η)`.
pub fn guess_factor_from_correlations(d: &[DMatrix<f64>], f: &RomFactor, k: Option<usize>) -> Result<BlockMatrix> {
    let k = k.unwrap_or(f.rank).clamp(1, f.rank);
    let m = f.block_size();
    if f.is_full_rank() {
        let mass = assemble_mass(d, k)?;
        return block_cholesky(&mass).map_err(staged(Stage::GuessCholesky));
    }
    let mass = assemble_mass(d, f.n_t)?;
    let projected = f.pi.transpose() * mass.matrix() * &f.pi;
    let projected = symmetrize(&BlockMatrix::new(projected, m).expect("square"));
    let r = block_cholesky(&projected).map_err(staged(Stage::GuessCholesky))?;
    Ok(if k == f.rank { r } else { r.leading(k) })
}

/// Internal wave estimates `φ̃_j`, `n_dof × m` each.
#[derive(Debug, Clone)]
pub struct InternalWave {
    pub fields: Vec<DMatrix<f64>>,
    pub cell_area: f64,
}

/// `φ̃_j = Φ(η) Π R(η)^{-1} φ_j^ROM`: the data ROM snapshots expressed in
/// the orthonormalized basis of the guess snapshots.
pub fn internal_wave(medium: &MediumModel, f: &RomFactor, sim: &SimConfig) -> Result<InternalWave> {
    let set = sim.snapshots(medium, f.n_t)?;
    let m = f.block_size();
    let n = sim.grid.n_dof();
    let mut phi = DMatrix::zeros(n, f.n_t * m);
    for (j, s) in set.states.iter().enumerate() {
        phi.view_mut((0, j * m), (n, m)).copy_from(s);
    }
    let d = snapshot_correlations(&set);
    let mut d_ext = d.clone();
    // the truncated path needs D_{n_t}; never read at full rank
    d_ext.push(DMatrix::zeros(m, m));
    let r_eta = guess_factor_from_correlations(&d_ext, f, None)?;
    let basis = right_solve_upper(&(phi * &f.pi), r_eta.matrix());
    let fields = rom_snapshots(f, f.rank).iter().map(|c| &basis * c).collect();
    Ok(InternalWave {
        fields,
        cell_area: sim.grid.cell_area(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockla::is_block_upper_hessenberg;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mass_layouts() {
        let d0 = dmatrix![2.0, 1.0; 1.0, 3.0];
        assert_eq!(assemble_mass(std::slice::from_ref(&d0), 1).unwrap().matrix(), &d0);
        let id = DMatrix::<f64>::identity(2, 2);
        let m = assemble_mass(&[id.clone(), DMatrix::zeros(2, 2)], 2).unwrap();
        assert_eq!(m.matrix(), &DMatrix::<f64>::identity(4, 4));
        assert!(matches!(
            assemble_mass(std::slice::from_ref(&id), 2),
            Err(RomError::InsufficientData { need: 1, have: 0 })
        ));
    }

    #[test]
    fn stiffness_layout() {
        let d: Vec<DMatrix<f64>> = (0..3).map(|k| DMatrix::from_element(1, 1, k as f64 + 1.0)).collect();
        let d: Vec<DMatrix<f64>> = d
            .into_iter()
            .enumerate()
            .map(|(k, x)| if k == 0 { x } else { dmatrix![x[(0, 0)], 0.5; -0.5, 1.0] })
            .collect();
        // mixed shapes are rejected
        assert!(assemble_stiffness(&d, 2).is_err());
        let d0 = dmatrix![1.0, 0.2; 0.3, 1.0];
        let d1 = dmatrix![0.5, 0.1; 0.0, 0.4];
        let d2 = dmatrix![0.2, 0.0; 0.7, 0.1];
        let s = assemble_stiffness(&[d0.clone(), d1.clone(), d2.clone()], 2).unwrap();
        assert_eq!(s.block(0, 0), d1);
        assert_eq!(s.block(0, 1), d2);
        assert_eq!(s.block(1, 0), d0);
        assert_eq!(s.block(1, 1), d1);
        assert!(matches!(
            assemble_stiffness(&[d0, d1], 2),
            Err(RomError::InsufficientData { need: 2, .. })
        ));
    }

    #[test]
    fn toeplitz_blocks_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d: Vec<DMatrix<f64>> = (0..5).map(|_| DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0))).collect();
        let m = assemble_mass_raw(&d, 5).unwrap();
        for j in 0..5 {
            for l in j..5 {
                assert_eq!(m.block(j, l), d[l - j]);
            }
        }
    }

    /// Correlations of a random orthogonal propagation, which are exact
    /// data for some snapshot sequence.
    fn synthetic(n: usize, m: usize, n_t: usize, seed: u64) -> Vec<DMatrix<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let skew = (&a - a.transpose()) * 0.3;
        let u = skew.exp();
        let mut phi = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let phi0 = phi.clone();
        let mut d = Vec::new();
        for _ in 0..=n_t {
            d.push(phi0.transpose() * &phi);
            phi = &u * phi;
        }
        d
    }

    #[test]
    fn full_rank_rom_interpolates() {
        let (m, n_t) = (2, 5);
        let d = synthetic(30, m, n_t, 1);
        let mass = assemble_mass(&d, n_t).unwrap();
        let stiff = assemble_stiffness(&d, n_t).unwrap();
        let f = build_rom(&mass, &stiff, n_t).unwrap();
        assert_eq!(f.r, block_cholesky(&mass).unwrap());
        let snaps = rom_snapshots(&f, n_t + 2);
        assert_eq!(snaps[0], f.r.matrix().columns(0, m).into_owned());
        for j in 0..n_t {
            let got = snaps[0].transpose() * &snaps[j];
            assert!((got - &d[j]).norm() <= 1e-8 * d[0].norm());
        }
        let rep = is_block_upper_hessenberg(&f.p, 1e-8);
        assert!(rep.is_hessenberg && rep.unreduced, "{rep:?}");
        let ptp = f.p.matrix().transpose() * f.p.matrix();
        let k = (n_t - 1) * m;
        let id = DMatrix::<f64>::identity(n_t * m, n_t * m);
        assert!((ptp.columns(0, k) - id.columns(0, k)).norm() < 1e-7);
        assert!(snaps[n_t].norm() <= snaps[0].norm() * (1.0 + 1e-6));
    }

    #[test]
    fn truncated_rom_structure() {
        let (m, n_t) = (2, 6);
        let d = synthetic(9, m, n_t, 2);
        let mass = assemble_mass(&d, n_t).unwrap();
        let stiff = assemble_stiffness(&d, n_t).unwrap();
        let r = 4;
        let f = build_rom(&mass, &stiff, r).unwrap();
        assert_eq!(f.pi.shape(), (n_t * m, r * m));
        assert!((f.pi.transpose() * &f.pi - DMatrix::<f64>::identity(r * m, r * m)).norm() < 1e-10);
        assert!(is_block_upper_hessenberg(&f.p, 1e-8).is_hessenberg);
        let proj = f.pi.transpose() * mass.matrix() * &f.pi;
        let rtr = f.r.matrix().transpose() * f.r.matrix();
        assert!((rtr - &proj).norm() <= 1e-9 * proj.norm());
        for i in 0..r * m {
            assert!(f.r.matrix()[(i, i)] > 0.0);
        }
        let g = guess_factor_from_correlations(&d, &f, None).unwrap();
        assert!((g.matrix() - f.r.matrix()).norm() <= 1e-9 * f.r.norm());
    }

    #[test]
    fn auto_rank_thresholds() {
        let d = synthetic(8, 2, 6, 3);
        let mass = assemble_mass(&d, 6).unwrap();
        // 12-dimensional mass from an 8-dimensional state: at most 4 full blocks
        assert!(auto_rank(&mass, 0.0) <= 4);
        assert!(auto_rank(&mass, 0.1) <= auto_rank(&mass, 0.0));
    }

    #[test]
    fn rank_out_of_range() {
        let d = synthetic(10, 1, 3, 4);
        let mass = assemble_mass(&d, 3).unwrap();
        let stiff = assemble_stiffness(&d, 3).unwrap();
        assert!(build_rom(&mass, &stiff, 0).is_err());
        assert!(build_rom(&mass, &stiff, 4).is_err());
    }
}
