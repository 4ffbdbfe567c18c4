use nalgebra::{DMatrix, DVector};

use super::{DenseLu, Partition, ResidualProgram};
use crate::error::{Error, Result};

/// Mixed linear complementarity problem in standard form:
///
/// ```text
/// E x + F y + f = 0
/// G x + H y + z + k = 0
/// y ∘ z = ρ 1,  y, z ≥ 0
/// ```
///
/// The problem data θ is ordered `(vec E, vec F, vec G, vec H, f, k)` with
/// column-major `vec`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlcpProgram {
    pub e: DMatrix<f64>,
    pub f_mat: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub k: DVector<f64>,
}

impl MlcpProgram {
    pub fn new(
        e: DMatrix<f64>,
        f_mat: DMatrix<f64>,
        g: DMatrix<f64>,
        h: DMatrix<f64>,
        f: DVector<f64>,
        k: DVector<f64>,
    ) -> Result<Self> {
        let n = e.nrows();
        let m = h.nrows();
        let checks = [
            ("E columns", n, e.ncols()),
            ("F rows", n, f_mat.nrows()),
            ("F columns", m, f_mat.ncols()),
            ("G rows", m, g.nrows()),
            ("G columns", n, g.ncols()),
            ("H columns", m, h.ncols()),
            ("f", n, f.len()),
            ("k", m, k.len()),
        ];
        for (context, expected, actual) in checks {
            if expected != actual {
                return Err(Error::DimensionMismatch {
                    context,
                    expected,
                    actual,
                });
            }
        }
        Ok(MlcpProgram { e, f_mat, g, h, f, k })
    }

    /// Problem data θ.
    pub fn theta(&self) -> DVector<f64> {
        let parts = [
            self.e.as_slice(),
            self.f_mat.as_slice(),
            self.g.as_slice(),
            self.h.as_slice(),
            self.f.as_slice(),
            self.k.as_slice(),
        ];
        DVector::from_iterator(self.num_params(), parts.into_iter().flatten().copied())
    }

    /// Rebuilds the program from data with the same dimensions.
    pub fn with_theta(&self, theta: &DVector<f64>) -> Self {
        let mut out = self.clone();
        let mut at = 0;
        for block in [
            out.e.as_mut_slice(),
            out.f_mat.as_mut_slice(),
            out.g.as_mut_slice(),
            out.h.as_mut_slice(),
            out.f.as_mut_slice(),
            out.k.as_mut_slice(),
        ] {
            let len = block.len();
            block.copy_from_slice(&theta.as_slice()[at..at + len]);
            at += len;
        }
        out
    }
}

impl ResidualProgram for MlcpProgram {
    type Factor = DenseLu;

    fn partition(&self) -> Partition {
        Partition {
            primal: self.e.nrows(),
            cone: self.h.nrows(),
        }
    }

    fn num_params(&self) -> usize {
        let (n, m) = (self.e.nrows(), self.h.nrows());
        n * n + 2 * n * m + m * m + n + m
    }

    fn residual(&self, w: &DVector<f64>, rho: f64, out: &mut DVector<f64>) {
        let (n, m) = (self.e.nrows(), self.h.nrows());
        let x = w.rows(0, n);
        let y = w.rows(n, m);
        let z = w.rows(n + m, m);
        out.rows_mut(0, n).copy_from(&(&self.e * x + &self.f_mat * y + &self.f));
        out.rows_mut(n, m).copy_from(&(&self.g * x + &self.h * y + z + &self.k));
        for i in 0..m {
            out[n + m + i] = y[i] * z[i] - rho;
        }
    }

    fn jacobian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let (n, m) = (self.e.nrows(), self.h.nrows());
        let mut jac = DMatrix::zeros(n + 2 * m, n + 2 * m);
        jac.view_mut((0, 0), (n, n)).copy_from(&self.e);
        jac.view_mut((0, n), (n, m)).copy_from(&self.f_mat);
        jac.view_mut((n, 0), (m, n)).copy_from(&self.g);
        jac.view_mut((n, n), (m, m)).copy_from(&self.h);
        for i in 0..m {
            jac[(n + i, n + m + i)] = 1.0;
            jac[(n + m + i, n + i)] = w[n + m + i];
            jac[(n + m + i, n + m + i)] = w[n + i];
        }
        jac
    }

    fn factorize(&self, w: &DVector<f64>) -> Result<DenseLu> {
        DenseLu::new(self.jacobian(w))
    }

    fn parameter_jacobian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let (n, m) = (self.e.nrows(), self.h.nrows());
        let x: Vec<f64> = w.rows(0, n).iter().copied().collect();
        let y: Vec<f64> = w.rows(n, m).iter().copied().collect();
        let mut jac = DMatrix::zeros(n + 2 * m, self.num_params());
        let mut col = 0;
        // d(A v)/d vec(A) places v[j] at row i for column (i, j).
        let mut block = |row0: usize, rows: usize, v: &[f64], col: &mut usize| {
            for &vj in v {
                for i in 0..rows {
                    jac[(row0 + i, *col)] = vj;
                    *col += 1;
                }
            }
        };
        block(0, n, &x, &mut col);
        block(0, n, &y, &mut col);
        block(n, m, &x, &mut col);
        block(n, m, &y, &mut col);
        for i in 0..n {
            jac[(i, col + i)] = 1.0;
        }
        col += n;
        for i in 0..m {
            jac[(n + i, col + i)] = 1.0;
        }
        jac
    }
}
