//! Dense block-structured linear algebra.
//!
//! Matrices here are square with a uniform block size `m`; block `(j, l)`
//! covers rows `j*m..(j+1)*m` and columns `l*m..(l+1)*m`. The mass,
//! stiffness, Cholesky factor and propagator of a ROM are all stored this
//! way with `m` equal to the number of excitations.

use nalgebra::{DMatrix, DMatrixView, DVector, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite (pivot {index} = {value:.3e})")]
    NotPositiveDefinite { index: usize, value: f64 },
    #[error("block Arnoldi breakdown at step {step} (min Gram eigenvalue {min_eigenvalue:.3e})")]
    Breakdown { step: usize, min_eigenvalue: f64 },
    #[error("truncation rank {rank} too large: eigenvalue {index} is {value:.3e}")]
    RankTooLarge { rank: usize, index: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Thresholds shared by the factorizations in this module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Allowed `‖M − Mᵀ‖_F / ‖M‖_F` for inputs that must be symmetric.
    pub symmetry: f64,
    /// Smallest eigenvalue accepted relative to the largest in `spd_inverse_sqrt`.
    pub spd_relative: f64,
    /// Block Arnoldi stops when `λ_min(wᵀw) < breakdown · ‖X‖²`.
    pub breakdown: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            symmetry: 1e-10,
            spd_relative: 1e-14,
            breakdown: 1e-12,
        }
    }
}

/// Square matrix with a uniform block partition.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    data: DMatrix<f64>,
    block_size: usize,
}

impl BlockMatrix {
    pub fn new(data: DMatrix<f64>, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(LinalgError::Shape("block size must be positive".into()));
        }
        if !data.is_square() {
            return Err(LinalgError::Shape(format!(
                "block matrix must be square, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.nrows() == 0 || !data.nrows().is_multiple_of(block_size) {
            return Err(LinalgError::Shape(format!(
                "side {} is not a positive multiple of block size {}",
                data.nrows(),
                block_size
            )));
        }
        Ok(BlockMatrix { data, block_size })
    }

    pub fn identity(n_blocks: usize, block_size: usize) -> Self {
        let n = n_blocks * block_size;
        BlockMatrix {
            data: DMatrix::identity(n, n),
            block_size,
        }
    }

    pub fn zeros(n_blocks: usize, block_size: usize) -> Self {
        let n = n_blocks * block_size;
        BlockMatrix {
            data: DMatrix::zeros(n, n),
            block_size,
        }
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn n_blocks(&self) -> usize {
        self.data.nrows() / self.block_size
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn block(&self, j: usize, l: usize) -> DMatrixView<'_, f64> {
        let m = self.block_size;
        self.data.view((j * m, l * m), (m, m))
    }

    pub fn set_block(&mut self, j: usize, l: usize, value: &DMatrix<f64>) {
        let m = self.block_size;
        assert_eq!(value.shape(), (m, m), "block shape");
        self.data.view_mut((j * m, l * m), (m, m)).copy_from(value);
    }

    /// Leading principal submatrix made of the first `k` block rows/columns.
    pub fn leading(&self, k: usize) -> BlockMatrix {
        assert!(k >= 1 && k <= self.n_blocks(), "leading block count out of range");
        let n = k * self.block_size;
        BlockMatrix {
            data: self.data.view((0, 0), (n, n)).into_owned(),
            block_size: self.block_size,
        }
    }

    pub fn transpose(&self) -> BlockMatrix {
        BlockMatrix {
            data: self.data.transpose(),
            block_size: self.block_size,
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn relative_asymmetry(&self) -> f64 {
        let n = self.data.norm();
        if n == 0.0 {
            return 0.0;
        }
        (&self.data - self.data.transpose()).norm() / n
    }
}

/// Tall `n·m × m` matrix: one block column.
#[derive(Debug, Clone, PartialEq)]
pub struct TallBlockMatrix {
    data: DMatrix<f64>,
    block_size: usize,
}

impl TallBlockMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let m = data.ncols();
        if m == 0 || data.nrows() == 0 || !data.nrows().is_multiple_of(m) {
            return Err(LinalgError::Shape(format!(
                "tall block matrix {}x{} must have rows a positive multiple of columns",
                data.nrows(),
                m
            )));
        }
        Ok(TallBlockMatrix { data, block_size: m })
    }

    /// Block column `j` of the `n·m × n·m` identity.
    pub fn identity_block(n_blocks: usize, block_size: usize, j: usize) -> Self {
        assert!(j < n_blocks);
        let mut data = DMatrix::zeros(n_blocks * block_size, block_size);
        for i in 0..block_size {
            data[(j * block_size + i, i)] = 1.0;
        }
        TallBlockMatrix { data, block_size }
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn n_blocks(&self) -> usize {
        self.data.nrows() / self.block_size
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn block(&self, j: usize) -> DMatrixView<'_, f64> {
        let m = self.block_size;
        self.data.view((j * m, 0), (m, m))
    }
}

/// Leading eigenpairs of a symmetric block matrix.
#[derive(Debug, Clone)]
pub struct SpectralTruncation {
    /// `n·m × r·m`, orthonormal columns.
    pub eigenvectors: DMatrix<f64>,
    /// `r·m` positive values, non-increasing.
    pub eigenvalues: DVector<f64>,
    pub rank: usize,
    pub block_size: usize,
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &BlockMatrix) -> BlockMatrix {
    let data = (&m.data + m.data.transpose()) * 0.5;
    BlockMatrix {
        data,
        block_size: m.block_size,
    }
}

/// Upper triangular `R` with `M = RᵀR`.
///
/// Scalar Cholesky realizes the block factorization: `R` is block upper
/// triangular with invertible (upper triangular) diagonal blocks. Row `i` of
/// `R` only reads the leading `(i+1)×(i+1)` part of `M`, so factoring a
/// leading submatrix gives bit-identical leading entries.
pub fn block_cholesky(m: &BlockMatrix) -> Result<BlockMatrix> {
    block_cholesky_with(m, &Tolerances::default())
}

pub fn block_cholesky_with(m: &BlockMatrix, tol: &Tolerances) -> Result<BlockMatrix> {
    let asymmetry = m.relative_asymmetry();
    if asymmetry > tol.symmetry {
        return Err(LinalgError::NotSymmetric { asymmetry });
    }
    let n = m.dim();
    let a = &m.data;
    let mut r = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut d = a[(i, i)];
        {
            let ci = r.column(i);
            for p in 0..i {
                d -= ci[p] * ci[p];
            }
        }
        if !(d > 0.0) {
            return Err(LinalgError::NotPositiveDefinite { index: i, value: d });
        }
        let rii = d.sqrt();
        r[(i, i)] = rii;
        for j in (i + 1)..n {
            let mut s = a[(i, j)];
            for p in 0..i {
                s -= r[(p, i)] * r[(p, j)];
            }
            r[(i, j)] = s / rii;
        }
    }
    Ok(BlockMatrix {
        data: r,
        block_size: m.block_size,
    })
}

fn sorted_eigen(g: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: ties keep the solver's order
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Symmetric positive definite inverse square root `G^{-1/2}`.
pub fn spd_inverse_sqrt(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_inverse_sqrt_with(g, &Tolerances::default())
}

pub fn spd_inverse_sqrt_with(g: &DMatrix<f64>, tol: &Tolerances) -> Result<DMatrix<f64>> {
    if !g.is_square() {
        return Err(LinalgError::Shape("inverse square root needs a square matrix".into()));
    }
    let (values, vectors) = sorted_eigen(g);
    let n = values.len();
    let max = values[0];
    let min = values[n - 1];
    if !(max > 0.0) || min <= tol.spd_relative * max {
        return Err(LinalgError::NotPositiveDefinite {
            index: n - 1,
            value: min,
        });
    }
    let scaled = DMatrix::from_fn(n, n, |i, k| vectors[(i, k)] / values[k].sqrt());
    Ok(&scaled * vectors.transpose())
}

/// Upper bound on the spectral norm, `sqrt(‖X‖₁ ‖X‖∞)`.
fn norm_bound(x: &DMatrix<f64>) -> f64 {
    let one = x
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let inf = x
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    (one * inf).sqrt()
}

/// Block Arnoldi iteration.
///
/// Returns orthogonal `Q` whose first block column is `y (yᵀy)^{-1/2}` and
/// for which `QᵀXQ` is block upper Hessenberg. Each step orthogonalizes the
/// new block twice (classical Gram-Schmidt) and normalizes with the SPD
/// inverse square root of its Gram matrix. `‖X‖` in the breakdown test is
/// `sqrt(‖X‖₁‖X‖∞)`.
pub fn block_arnoldi(x: &BlockMatrix, y: &TallBlockMatrix) -> Result<BlockMatrix> {
    block_arnoldi_with(x, y, &Tolerances::default())
}

pub fn block_arnoldi_with(
    x: &BlockMatrix,
    y: &TallBlockMatrix,
    tol: &Tolerances,
) -> Result<BlockMatrix> {
    let m = y.block_size();
    if x.block_size() != m || x.dim() != y.matrix().nrows() {
        return Err(LinalgError::Shape(format!(
            "Arnoldi operator {}x{} (block {}) incompatible with start block {}x{}",
            x.dim(),
            x.dim(),
            x.block_size(),
            y.matrix().nrows(),
            m
        )));
    }
    let n_blocks = x.n_blocks();
    let dim = x.dim();
    let xnorm = norm_bound(x.matrix());
    let threshold = tol.breakdown * xnorm * xnorm;

    let normalize = |w: &DMatrix<f64>, step: usize| -> Result<DMatrix<f64>> {
        let gram = w.transpose() * w;
        let (values, _) = sorted_eigen(&gram);
        let min = values[values.len() - 1];
        if min < threshold || !(values[0] > 0.0) {
            return Err(LinalgError::Breakdown {
                step,
                min_eigenvalue: min,
            });
        }
        let h = spd_inverse_sqrt_with(&gram, tol).map_err(|_| LinalgError::Breakdown {
            step,
            min_eigenvalue: min,
        })?;
        Ok(w * h)
    };

    let mut q = DMatrix::<f64>::zeros(dim, dim);
    let q0 = normalize(y.matrix(), 0)?;
    q.view_mut((0, 0), (dim, m)).copy_from(&q0);
    for k in 1..n_blocks {
        let prev = q.view((0, (k - 1) * m), (dim, m));
        let mut w = x.matrix() * prev;
        let basis = q.view((0, 0), (dim, k * m));
        for _ in 0..2 {
            let coeff = basis.transpose() * &w;
            w -= basis * coeff;
        }
        let mut qk = normalize(&w, k)?;
        // a near-breakdown Gram loses orthogonality in the scaling; one
        // more projection and rescale restores it
        let coeff = basis.transpose() * &qk;
        qk -= basis * coeff;
        let gram = qk.transpose() * &qk;
        let h = spd_inverse_sqrt_with(&gram, tol).map_err(|_| LinalgError::Breakdown {
            step: k,
            min_eigenvalue: 0.0,
        })?;
        let qk = qk * h;
        q.view_mut((0, k * m), (dim, m)).copy_from(&qk);
    }
    Ok(BlockMatrix {
        data: q,
        block_size: m,
    })
}

/// The `r·m` leading eigenpairs of `symmetrize(M)`, sorted descending.
pub fn spectral_truncate(m: &BlockMatrix, rank: usize) -> Result<SpectralTruncation> {
    let nb = m.n_blocks();
    if rank == 0 || rank > nb {
        return Err(LinalgError::Shape(format!(
            "truncation rank {rank} outside 1..={nb}"
        )));
    }
    let bs = m.block_size();
    let (values, vectors) = sorted_eigen(m.matrix());
    let keep = rank * bs;
    let last = values[keep - 1];
    if !(last > 0.0) {
        return Err(LinalgError::RankTooLarge {
            rank,
            index: keep - 1,
            value: last,
        });
    }
    Ok(SpectralTruncation {
        eigenvectors: vectors.columns(0, keep).into_owned(),
        eigenvalues: values.rows(0, keep).into_owned(),
        rank,
        block_size: bs,
    })
}

/// Eigenvalues of `symmetrize(M)` in descending order.
pub fn sorted_eigenvalues(m: &BlockMatrix) -> DVector<f64> {
    sorted_eigen(m.matrix()).0
}

/// Largest `r` with `λ_{r·m} ≥ δ·λ_1` (at least 1 when `λ_1 > 0`).
pub fn threshold_rank(m: &BlockMatrix, delta: f64) -> usize {
    let values = sorted_eigenvalues(m);
    let bs = m.block_size();
    let top = values[0];
    let mut rank = 0;
    for r in 1..=m.n_blocks() {
        if values[r * bs - 1] >= delta * top && values[r * bs - 1] > 0.0 {
            rank = r;
        } else {
            break;
        }
    }
    rank.max(1)
}

/// Outcome of a block upper Hessenberg test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessenbergReport {
    pub is_hessenberg: bool,
    /// Largest `‖X_{j,l}‖_F / ‖X‖_F` over blocks with `j ≥ l + 2`.
    pub max_violation: f64,
    /// Every first-subdiagonal block exceeds `tol·‖X‖_F`.
    pub unreduced: bool,
    /// Smallest `‖X_{l+1,l}‖_F / ‖X‖_F`.
    pub min_subdiagonal: f64,
}

pub fn is_block_upper_hessenberg(x: &BlockMatrix, tol: f64) -> HessenbergReport {
    let total = x.norm();
    let scale = if total > 0.0 { total } else { 1.0 };
    let nb = x.n_blocks();
    let mut max_violation: f64 = 0.0;
    let mut min_sub = f64::INFINITY;
    for l in 0..nb {
        for j in (l + 1)..nb {
            let norm = x.block(j, l).norm() / scale;
            if j == l + 1 {
                min_sub = min_sub.min(norm);
            } else {
                max_violation = max_violation.max(norm);
            }
        }
    }
    if nb < 2 {
        min_sub = 0.0;
    }
    HessenbergReport {
        is_hessenberg: max_violation <= tol,
        max_violation,
        unreduced: nb >= 2 && min_sub > tol,
        min_subdiagonal: min_sub,
    }
}

/// `X · R⁻¹` for upper triangular `R`.
pub fn right_solve_upper(x: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    // X R⁻¹ = (R⁻ᵀ Xᵀ)ᵀ
    let xt = x.transpose();
    let sol = r
        .tr_solve_upper_triangular(&xt)
        .expect("upper triangular factor with zero diagonal");
    sol.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let a = random_matrix(n, seed);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn cholesky_identity() {
        let id = BlockMatrix::identity(2, 2);
        let r = block_cholesky(&id).unwrap();
        assert_eq!(r.matrix(), id.matrix());
    }

    #[test]
    fn cholesky_two_by_two() {
        let m = BlockMatrix::new(dmatrix![4.0, 2.0; 2.0, 5.0], 1).unwrap();
        let r = block_cholesky(&m).unwrap();
        assert_eq!(r.matrix(), &dmatrix![2.0, 1.0; 0.0, 2.0]);
        let back = r.matrix().transpose() * r.matrix();
        assert!((back - m.matrix()).norm() < 1e-15);
    }

    #[test]
    fn cholesky_indefinite() {
        let m = BlockMatrix::new(dmatrix![1.0, 2.0; 2.0, 1.0], 1).unwrap();
        match block_cholesky(&m) {
            Err(LinalgError::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_rejects_asymmetric() {
        let m = BlockMatrix::new(dmatrix![4.0, 2.0; 1.0, 5.0], 1).unwrap();
        assert!(matches!(
            block_cholesky(&m),
            Err(LinalgError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn cholesky_leading_rows_are_bit_identical() {
        let full = BlockMatrix::new(random_spd(12, 3), 3).unwrap();
        let r_full = block_cholesky(&full).unwrap();
        let r_lead = block_cholesky(&full.leading(2)).unwrap();
        assert_eq!(r_full.leading(2).matrix(), r_lead.matrix());
    }

    #[test]
    fn inverse_sqrt_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert!((spd_inverse_sqrt(&id).unwrap() - &id).norm() < 1e-15);
        let h = spd_inverse_sqrt(&dmatrix![4.0, 0.0; 0.0, 9.0]).unwrap();
        assert!((h - dmatrix![0.5, 0.0; 0.0, 1.0 / 3.0]).norm() < 1e-15);
        let g = random_spd(6, 11);
        let h = spd_inverse_sqrt(&g).unwrap();
        let err = (&h * &g * &h - DMatrix::<f64>::identity(6, 6)).norm();
        assert!(err < 1e-11, "{err}");
        assert!((&h - h.transpose()).norm() < 1e-13);
    }

    #[test]
    fn inverse_sqrt_rejects_singular() {
        let g = dmatrix![1.0, 1.0; 1.0, 1.0];
        assert!(matches!(
            spd_inverse_sqrt(&g),
            Err(LinalgError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn arnoldi_two_by_two() {
        let x = BlockMatrix::new(dmatrix![1.0, 0.0; 0.0, 2.0], 1).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let y = TallBlockMatrix::new(dmatrix![s; s]).unwrap();
        let q = block_arnoldi(&x, &y).unwrap();
        // hand Gram-Schmidt of {y, Xy}: Xy = (1,2)/√2, minus projection 3/2·y -> (-1,1)/(2√2)
        let expected = dmatrix![s, -s; s, s];
        for c in 0..2 {
            let col = q.matrix().column(c);
            let e = expected.column(c);
            let d = (col - e).norm().min((col + e).norm());
            assert!(d < 1e-14, "column {c}: {d}");
        }
    }

    #[test]
    fn arnoldi_breaks_down_on_invariant_start() {
        let x = BlockMatrix::identity(3, 2);
        let y = TallBlockMatrix::identity_block(3, 2, 0);
        match block_arnoldi(&x, &y) {
            Err(LinalgError::Breakdown { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected breakdown, got {other:?}"),
        }
    }

    #[test]
    fn arnoldi_random_is_hessenberg() {
        let x = BlockMatrix::new(random_matrix(8, 5), 2).unwrap();
        let raw = random_matrix(8, 6).columns(0, 2).into_owned();
        let y = TallBlockMatrix::new(raw.clone().qr().q()).unwrap();
        let q = block_arnoldi(&x, &y).unwrap();
        let qm = q.matrix();
        assert!((qm.transpose() * qm - DMatrix::<f64>::identity(8, 8)).norm() < 1e-11);
        let h = BlockMatrix::new(qm.transpose() * x.matrix() * qm, 2).unwrap();
        for l in 0..4 {
            for j in (l + 2)..4 {
                assert!(h.block(j, l).norm() < 1e-10);
            }
        }
        // the first block column spans y
        let first = qm.columns(0, 2);
        let proj = first * (first.transpose() * y.matrix());
        assert!((proj - y.matrix()).norm() < 1e-12);
    }

    #[test]
    fn truncate_diagonal() {
        let m = BlockMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 3.0, 2.0, 1.0])), 1).unwrap();
        let t = spectral_truncate(&m, 2).unwrap();
        assert_eq!(t.eigenvalues.as_slice(), &[4.0, 3.0]);
        for k in 0..2 {
            assert!((t.eigenvectors[(k, k)].abs() - 1.0).abs() < 1e-15);
        }
        assert!(t.eigenvectors.rows(2, 2).norm() < 1e-15);
    }

    #[test]
    fn truncate_full_rank_reconstructs() {
        let m = BlockMatrix::new(random_spd(9, 21), 3).unwrap();
        let t = spectral_truncate(&m, 3).unwrap();
        let rec = &t.eigenvectors * DMatrix::from_diagonal(&t.eigenvalues) * t.eigenvectors.transpose();
        assert!((rec - m.matrix()).norm() / m.norm() < 1e-11);
    }

    #[test]
    fn truncate_rejects_nonpositive_tail() {
        let m = BlockMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, -1e-9, 2.0])), 1).unwrap();
        assert!(spectral_truncate(&m, 3).is_ok());
        assert!(matches!(
            spectral_truncate(&m, 4),
            Err(LinalgError::RankTooLarge { rank: 4, .. })
        ));
    }

    #[test]
    fn symmetrize_examples() {
        let s = BlockMatrix::new(random_spd(4, 1), 2).unwrap();
        assert!((symmetrize(&s).matrix() - s.matrix()).norm() < 1e-15);
        let a = BlockMatrix::new(dmatrix![0.0, 2.0; 0.0, 0.0], 1).unwrap();
        assert_eq!(symmetrize(&a).matrix(), &dmatrix![0.0, 1.0; 1.0, 0.0]);
    }

    #[test]
    fn hessenberg_examples() {
        let rep = is_block_upper_hessenberg(&BlockMatrix::identity(4, 2), 1e-12);
        assert!(rep.is_hessenberg && !rep.unreduced);

        let mut tri = DMatrix::<f64>::zeros(8, 8);
        for i in 0..8 {
            tri[(i, i)] = 2.0;
            if i + 1 < 8 {
                tri[(i, i + 1)] = -1.0;
                tri[(i + 1, i)] = -1.0;
            }
        }
        let rep = is_block_upper_hessenberg(&BlockMatrix::new(tri.clone(), 2).unwrap(), 1e-12);
        assert!(rep.is_hessenberg);

        let mut bad = BlockMatrix::new(tri, 2).unwrap();
        bad.set_block(3, 0, &dmatrix![1.0, 0.0; 0.0, 1.0]);
        let rep = is_block_upper_hessenberg(&bad, 1e-12);
        assert!(!rep.is_hessenberg);
        assert!((rep.max_violation - 2f64.sqrt() / bad.norm()).abs() < 1e-15);
    }

    #[test]
    fn threshold_rank_counts_blocks() {
        let m = BlockMatrix::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 1e-3, 1e-4, 1e-9, 1e-10])),
            2,
        )
        .unwrap();
        assert_eq!(threshold_rank(&m, 1e-6), 2);
        assert_eq!(threshold_rank(&m, 1e-12), 3);
    }

    proptest! {
        #[test]
        fn cholesky_reconstructs_spd(seed in 0u64..500, blocks in 1usize..5, bs in 1usize..4) {
            let n = blocks * bs;
            let m = BlockMatrix::new(random_spd(n, seed), bs).unwrap();
            let r = block_cholesky(&m).unwrap();
            let rm = r.matrix();
            let back = rm.transpose() * rm;
            prop_assert!((back - m.matrix()).norm() <= 1e-10 * m.norm());
            for i in 0..n {
                prop_assert!(rm[(i, i)] > 0.0);
                for j in 0..i {
                    prop_assert_eq!(rm[(i, j)], 0.0);
                }
            }
        }

        #[test]
        fn symmetrize_is_the_nearest_symmetric(seed in 0u64..500) {
            let a = BlockMatrix::new(random_matrix(5, seed), 1).unwrap();
            let s = symmetrize(&a);
            prop_assert!((s.matrix() - s.matrix().transpose()).norm() <= f64::EPSILON * a.norm());
            // any symmetric perturbation moves further from `a`
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let e = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1e-3..1e-3));
            let sym_e = (&e + e.transpose()) * 0.5;
            let d0 = (s.matrix() - a.matrix()).norm();
            let d1 = (s.matrix() + sym_e - a.matrix()).norm();
            prop_assert!(d0 <= d1 + 1e-15);
        }

        #[test]
        fn arnoldi_orthogonal_and_hessenberg(seed in 0u64..200, blocks in 2usize..6) {
            let bs = 2;
            let n = blocks * bs;
            let x = BlockMatrix::new(random_matrix(n, seed), bs).unwrap();
            let y = TallBlockMatrix::new(random_matrix(n, seed + 1000).columns(0, bs).into_owned()).unwrap();
            if let Ok(q) = block_arnoldi(&x, &y) {
                let qm = q.matrix();
                prop_assert!((qm.transpose() * qm - DMatrix::<f64>::identity(n, n)).norm() <= 1e-10);
                let h = BlockMatrix::new(qm.transpose() * x.matrix() * qm, bs).unwrap();
                prop_assert!(is_block_upper_hessenberg(&h, 1e-10).is_hessenberg);
            }
        }
    }
}
