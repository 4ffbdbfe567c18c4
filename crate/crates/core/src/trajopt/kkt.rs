//! Block-tridiagonal Schur complement, block Cholesky and block elimination
//! for the Gauss-Newton KKT system
//!
//! ```text
//! [ W  Cᵀ ] [Δz]   [g]
//! [ C  0  ] [Δν] = [d]
//! ```
//!
//! with `W` block diagonal and `C` the stage-wise dynamics Jacobian.
//! Stage `k` constrains `x_{k+1} − f_k(x_k, u_k)` with `∂f_k/∂x_k = A_k`
//! and `∂f_k/∂u_k = B_k`; the first state is fixed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{Plan, Weights};
use crate::error::{Error, Result};

/// Dynamics Jacobians of every stage in the window.
#[derive(Debug, Clone, PartialEq)]
pub struct KktBlocks {
    /// `A_k`; `A_0` acts on the fixed initial state and is not used.
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
}

impl KktBlocks {
    pub fn stages(&self) -> usize {
        self.b.len()
    }
}

/// Diagonal blocks `Y_kk` and super-diagonal blocks `Y_{k,k+1}` of
/// `Y = C W⁻¹ Cᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct YBlocks {
    pub diag: Vec<DMatrix<f64>>,
    pub upper: Vec<DMatrix<f64>>,
}

/// Lower block-bidiagonal factor with `Y = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyBlocks {
    pub diag: Vec<DMatrix<f64>>,
    /// `L_{k+1,k}`.
    pub lower: Vec<DMatrix<f64>>,
}

pub fn assemble_y(blocks: &KktBlocks, weights: &Weights) -> YBlocks {
    let s = blocks.stages();
    let mut diag = Vec::with_capacity(s);
    let mut upper = Vec::with_capacity(s.saturating_sub(1));
    for k in 0..s {
        let b = &blocks.b[k];
        let mut y = b * &weights.r_inv[k] * b.transpose() + &weights.q_inv[k];
        if k > 0 {
            let a = &blocks.a[k];
            y += a * &weights.q_inv[k - 1] * a.transpose();
        }
        diag.push(y);
        if k + 1 < s {
            upper.push(-&weights.q_inv[k] * blocks.a[k + 1].transpose());
        }
    }
    YBlocks { diag, upper }
}

fn lower_cholesky(m: DMatrix<f64>, stage: usize) -> Result<DMatrix<f64>> {
    Cholesky::<f64, Dyn>::new(m)
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite { stage })
}

pub fn block_cholesky(y: &YBlocks) -> Result<CholeskyBlocks> {
    let s = y.diag.len();
    let mut diag: Vec<DMatrix<f64>> = Vec::with_capacity(s);
    let mut lower: Vec<DMatrix<f64>> = Vec::with_capacity(s.saturating_sub(1));
    for k in 0..s {
        let mut block = y.diag[k].clone();
        if k > 0 {
            let l = &lower[k - 1];
            block -= l * l.transpose();
        }
        diag.push(lower_cholesky(block, k)?);
        if k + 1 < s {
            // L_{k+1,k} L_kkᵀ = Y_{k+1,k}, i.e. L_kk L_{k+1,k}ᵀ = Y_{k,k+1}.
            let mut rhs = y.upper[k].clone();
            if !diag[k].solve_lower_triangular_mut(&mut rhs) {
                return Err(Error::NotPositiveDefinite { stage: k });
            }
            lower.push(rhs.transpose());
        }
    }
    Ok(CholeskyBlocks { diag, lower })
}

impl CholeskyBlocks {
    /// Solves `L Lᵀ v = rhs` by forward then backward block substitution.
    pub fn solve(&self, rhs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let s = self.diag.len();
        let mut w: Vec<DVector<f64>> = Vec::with_capacity(s);
        for k in 0..s {
            let mut r = rhs[k].clone();
            if k > 0 {
                r -= &self.lower[k - 1] * &w[k - 1];
            }
            self.diag[k].solve_lower_triangular_mut(&mut r);
            w.push(r);
        }
        for k in (0..s).rev() {
            let mut r = w[k].clone();
            if k + 1 < s {
                r -= self.lower[k].transpose() * &w[k + 1];
            }
            self.diag[k].tr_solve_lower_triangular_mut(&mut r);
            w[k] = r;
        }
        w
    }
}

/// `C v` for a primal-shaped vector `v`.
pub fn apply_c(blocks: &KktBlocks, v: &Plan) -> Vec<DVector<f64>> {
    (0..blocks.stages())
        .map(|k| {
            let mut r = &v.x[k] - &blocks.b[k] * &v.u[k];
            if k > 0 {
                r -= &blocks.a[k] * &v.x[k - 1];
            }
            r
        })
        .collect()
}

/// `Cᵀ ν` as a primal-shaped vector.
pub fn apply_ct(blocks: &KktBlocks, nu: &[DVector<f64>]) -> Plan {
    let s = blocks.stages();
    let u = (0..s).map(|k| -blocks.b[k].transpose() * &nu[k]).collect();
    let x = (0..s)
        .map(|k| {
            let mut r = nu[k].clone();
            if k + 1 < s {
                r -= blocks.a[k + 1].transpose() * &nu[k + 1];
            }
            r
        })
        .collect();
    Plan { u, x }
}

/// Block elimination: `Δν = Y⁻¹ (C W⁻¹ g − d)`, `Δz = W⁻¹ (g − Cᵀ Δν)`.
pub fn solve_kkt(
    blocks: &KktBlocks,
    weights: &Weights,
    chol: &CholeskyBlocks,
    g: &Plan,
    d: &[DVector<f64>],
) -> (Plan, Vec<DVector<f64>>) {
    let wg = weights.apply_inverse(g);
    let rhs: Vec<DVector<f64>> = apply_c(blocks, &wg).into_iter().zip(d).map(|(a, b)| a - b).collect();
    let dnu = chol.solve(&rhs);
    let ct = apply_ct(blocks, &dnu);
    let dz = weights.apply_inverse(&g.sub(&ct));
    (dz, dnu)
}
