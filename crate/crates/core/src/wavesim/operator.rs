use nalgebra::DMatrix;

use super::{Grid, MediumModel, Result, SimError};

/// A real linear map applied column by column.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `y = L x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// Upper bound on the spectral radius.
    fn norm_bound(&self) -> f64;

    /// `Y = L X` for a column-major block of states.
    fn apply_block(&self, x: &DMatrix<f64>, y: &mut DMatrix<f64>) {
        let n = self.dim();
        assert_eq!(x.nrows(), n);
        assert_eq!(y.shape(), x.shape());
        let xs = x.as_slice();
        let ys = y.as_mut_slice();
        for (xc, yc) in xs.chunks_exact(n).zip(ys.chunks_exact_mut(n)) {
            self.apply(xc, yc);
        }
    }
}

/// Dense matrix as an operator; used for small systems and tests.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub matrix: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        assert!(matrix.is_square());
        DenseOperator { matrix }
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.dim();
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for j in 0..n {
                s += self.matrix[(i, j)] * x[j];
            }
            *yi = s;
        }
    }

    fn norm_bound(&self) -> f64 {
        self.matrix
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn apply_block(&self, x: &DMatrix<f64>, y: &mut DMatrix<f64>) {
        self.matrix.mul_to(x, y);
    }
}

/// Skew-symmetric acoustic operator
///
/// ```text
/// L = [ 0        A G B ]
///     [ B D A    0     ]
/// ```
///
/// with `G` the two-point gradient from cells to faces (zero pressure
/// outside), `D = −Gᵀ` the divergence, `A = ρ_face^{-1/2}` and
/// `B = sqrt(K) = c·sqrt(ρ)` at cell centres. Face densities are the
/// arithmetic mean of the two adjacent cells (the single adjacent cell on
/// the walls).
#[derive(Debug, Clone)]
pub struct AcousticOperator {
    grid: Grid,
    /// `A/hx` on `u_x` faces.
    wx: Vec<f64>,
    /// `A/hy` on `u_y` faces.
    wy: Vec<f64>,
    /// `B` on cells.
    b: Vec<f64>,
    bound: f64,
}

pub fn assemble_operator(medium: &MediumModel, grid: &Grid) -> Result<AcousticOperator> {
    AcousticOperator::new(grid, medium)
}

impl AcousticOperator {
    pub fn new(grid: &Grid, medium: &MediumModel) -> Result<Self> {
        let n = grid.n_cells();
        if medium.c.len() != n || medium.rho.len() != n {
            return Err(SimError::ShapeMismatch(format!(
                "medium has {} / {} values, grid has {} cells",
                medium.c.len(),
                medium.rho.len(),
                n
            )));
        }
        medium.check_positive()?;
        let (nx, ny) = (grid.nx, grid.ny);
        let rho = &medium.rho;
        let b: Vec<f64> = medium
            .c
            .iter()
            .zip(rho)
            .map(|(c, r)| c * r.sqrt())
            .collect();

        let mut wx = vec![0.0; grid.n_ux()];
        for j in 0..ny {
            for i in 0..=nx {
                let rf = if i == 0 {
                    rho[grid.cell(0, j)]
                } else if i == nx {
                    rho[grid.cell(nx - 1, j)]
                } else {
                    0.5 * (rho[grid.cell(i - 1, j)] + rho[grid.cell(i, j)])
                };
                wx[i + (nx + 1) * j] = 1.0 / (rf.sqrt() * grid.hx);
            }
        }
        let mut wy = vec![0.0; grid.n_uy()];
        for j in 0..=ny {
            for i in 0..nx {
                let rf = if j == 0 {
                    rho[grid.cell(i, 0)]
                } else if j == ny {
                    rho[grid.cell(i, ny - 1)]
                } else {
                    0.5 * (rho[grid.cell(i, j - 1)] + rho[grid.cell(i, j)])
                };
                wy[i + nx * j] = 1.0 / (rf.sqrt() * grid.hy);
            }
        }

        let mut op = AcousticOperator {
            grid: *grid,
            wx,
            wy,
            b,
            bound: 0.0,
        };
        op.bound = op.gershgorin();
        Ok(op)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn gershgorin(&self) -> f64 {
        let g = &self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let bc = |i: isize, j: isize| -> f64 {
            if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
                0.0
            } else {
                self.b[i as usize + nx * j as usize]
            }
        };
        let mut best: f64 = 0.0;
        for j in 0..ny {
            for i in 0..=nx {
                let s = self.wx[i + (nx + 1) * j] * (bc(i as isize - 1, j as isize) + bc(i as isize, j as isize));
                best = best.max(s);
            }
        }
        for j in 0..=ny {
            for i in 0..nx {
                let s = self.wy[i + nx * j] * (bc(i as isize, j as isize - 1) + bc(i as isize, j as isize));
                best = best.max(s);
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                let s = self.b[i + nx * j]
                    * (self.wx[i + (nx + 1) * j]
                        + self.wx[i + 1 + (nx + 1) * j]
                        + self.wy[i + nx * j]
                        + self.wy[i + nx * (j + 1)]);
                best = best.max(s);
            }
        }
        best
    }

    /// Dense copy, for small grids in tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for k in 0..n {
            e[k] = 1.0;
            self.apply(&e, &mut col);
            m.set_column(k, &nalgebra::DVector::from_column_slice(&col));
            e[k] = 0.0;
        }
        m
    }
}

impl LinearOperator for AcousticOperator {
    fn dim(&self) -> usize {
        self.grid.n_dof()
    }

    fn norm_bound(&self) -> f64 {
        self.bound
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = &self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let (n_ux, n_uy) = (g.n_ux(), g.n_uy());
        let (ux, rest) = x.split_at(n_ux);
        let (uy, p) = rest.split_at(n_uy);
        let (yux, rest) = y.split_at_mut(n_ux);
        let (yuy, yp) = rest.split_at_mut(n_uy);
        let b = &self.b;
        let (wx, wy) = (&self.wx, &self.wy);

        // faces: A G B p
        for j in 0..ny {
            let row = nx * j;
            let frow = (nx + 1) * j;
            let mut left = 0.0;
            for i in 0..nx {
                let here = b[row + i] * p[row + i];
                yux[frow + i] = wx[frow + i] * (here - left);
                left = here;
            }
            yux[frow + nx] = wx[frow + nx] * (0.0 - left);
        }
        for i in 0..nx {
            yuy[i] = wy[i] * (b[i] * p[i]);
        }
        for j in 1..ny {
            for i in 0..nx {
                let up = b[i + nx * (j - 1)] * p[i + nx * (j - 1)];
                let here = b[i + nx * j] * p[i + nx * j];
                yuy[i + nx * j] = wy[i + nx * j] * (here - up);
            }
        }
        for i in 0..nx {
            let up = b[i + nx * (ny - 1)] * p[i + nx * (ny - 1)];
            yuy[i + nx * ny] = wy[i + nx * ny] * (0.0 - up);
        }

        // cells: B D A u
        for j in 0..ny {
            let frow = (nx + 1) * j;
            for i in 0..nx {
                let c = i + nx * j;
                let div = wx[frow + i + 1] * ux[frow + i + 1] - wx[frow + i] * ux[frow + i]
                    + wy[c + nx] * uy[c + nx]
                    - wy[c] * uy[c];
                yp[c] = b[c] * div;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn layered(grid: &Grid) -> MediumModel {
        MediumModel::from_fn(grid, 1.0, 1.0, |x, y| (1.0 + 0.3 * x + 0.2 * y, 1.0 + 0.5 * y * x)).unwrap()
    }

    #[test]
    fn homogeneous_is_exactly_skew() {
        let g = Grid::new(5, 4, 0.2, 0.3).unwrap();
        let op = assemble_operator(&MediumModel::homogeneous(&g, 1.3, 0.8), &g).unwrap();
        let l = op.to_dense();
        assert_eq!((&l + l.transpose()).amax(), 0.0);
    }

    #[test]
    fn heterogeneous_is_exactly_skew() {
        let g = Grid::new(6, 5, 0.2, 0.1).unwrap();
        let op = assemble_operator(&layered(&g), &g).unwrap();
        let l = op.to_dense();
        assert_eq!((&l + l.transpose()).amax(), 0.0);
        assert!(l.amax() > 0.0);
    }

    #[test]
    fn wrong_field_length() {
        let g = Grid::new(4, 4, 1.0, 1.0).unwrap();
        let m = MediumModel {
            c: vec![1.0; 15],
            rho: vec![1.0; 16],
            c_o: 1.0,
            rho_o: 1.0,
        };
        assert!(matches!(assemble_operator(&m, &g), Err(SimError::ShapeMismatch(_))));
    }

    #[test]
    fn gershgorin_bounds_spectrum() {
        let g = Grid::new(5, 5, 0.2, 0.2).unwrap();
        let op = assemble_operator(&layered(&g), &g).unwrap();
        let l = op.to_dense();
        let ltl = l.transpose() * &l;
        let top = SymmetricEigen::new(ltl).eigenvalues.max().sqrt();
        assert!(top <= op.norm_bound() * (1.0 + 1e-12));
    }

    #[test]
    fn spectrum_matches_dirichlet_laplacian() {
        // c = 1 on the unit square, 8x8 cells: ω² are the eigenvalues of the
        // 5-point Laplacian with zero pressure one half-cell outside
        let n = 8;
        let h = 1.0 / n as f64;
        let g = Grid::new(n, n, h, h).unwrap();
        let op = assemble_operator(&MediumModel::homogeneous(&g, 1.0, 1.0), &g).unwrap();
        let l = op.to_dense();
        let mut omega2: Vec<f64> = SymmetricEigen::new(l.transpose() * &l)
            .eigenvalues
            .iter()
            .copied()
            .filter(|v| *v > 1e-8)
            .collect();
        omega2.sort_by(|a, b| a.partial_cmp(b).unwrap());

        // 1D cell-centred Dirichlet Laplacian with ghost p = 0 beyond the wall
        // face and the wall face velocity kept: symbol (2 - 2cos θ)/h² plus
        // the wall rows, computed densely
        let mut d1 = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            d1[(i, i)] = 2.0 / (h * h);
            if i + 1 < n {
                d1[(i, i + 1)] = -1.0 / (h * h);
                d1[(i + 1, i)] = -1.0 / (h * h);
            }
        }
        let lam1 = SymmetricEigen::new(d1).eigenvalues;
        let mut expected: Vec<f64> = Vec::new();
        for a in lam1.iter() {
            for b in lam1.iter() {
                expected.push(a + b);
            }
        }
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // each ω² appears for ±iω, so twice in LᵀL
        assert_eq!(omega2.len(), 2 * expected.len());
        for (k, e) in expected.iter().enumerate() {
            let got = omega2[2 * k];
            assert!((got - e).abs() < 1e-9 * e, "{k}: {got} vs {e}");
            assert!((omega2[2 * k + 1] - e).abs() < 1e-9 * e);
        }
    }

    #[test]
    fn block_apply_matches_columns() {
        let g = Grid::new(4, 3, 0.25, 0.25).unwrap();
        let op = assemble_operator(&layered(&g), &g).unwrap();
        let n = op.dim();
        let x = DMatrix::from_fn(n, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let mut y = DMatrix::zeros(n, 3);
        op.apply_block(&x, &mut y);
        let dense = op.to_dense() * &x;
        assert!((y - dense).amax() < 1e-12);
    }

    #[test]
    fn constant_pressure_gradient_vanishes_inside() {
        let g = Grid::new(5, 4, 0.1, 0.1).unwrap();
        let op = assemble_operator(&MediumModel::homogeneous(&g, 1.0, 1.0), &g).unwrap();
        let mut x = vec![0.0; op.dim()];
        for v in &mut x[g.p_offset()..] {
            *v = 1.0;
        }
        let mut y = vec![0.0; op.dim()];
        op.apply(&x, &mut y);
        // interior faces see no gradient; wall faces see the jump to zero
        for j in 0..g.ny {
            for i in 1..g.nx {
                assert_eq!(y[i + (g.nx + 1) * j], 0.0);
            }
            assert!(y[(g.nx + 1) * j] > 0.0);
        }
    }
}
