use nalgebra::{DMatrix, DVector, Dyn, QR};

use super::StageLinearization;
use crate::error::{Error, Result};
use crate::lcp::Factorization;

/// Relative pivot size below which the Schur complement counts as rank
/// deficient.
const RANK_TOL: f64 = 1e-13;

/// QR factors of the Schur complement `H̃ − G E⁻¹ F` at the current cone
/// iterate, with `H̃ = H − diag(z / y)`.
pub struct CondensedFactor<'a> {
    stage: &'a StageLinearization,
    y: DVector<f64>,
    z: DVector<f64>,
    qr: Option<QR<f64, Dyn, Dyn>>,
}

impl<'a> CondensedFactor<'a> {
    pub fn new(stage: &'a StageLinearization, y: DVector<f64>, z: DVector<f64>) -> Result<Self> {
        let k = 4 * stage.nc;
        if k == 0 {
            return Ok(CondensedFactor { stage, y, z, qr: None });
        }
        let schur = reduced_h(stage, &y, &z) - &stage.g_e_inv_f;
        let qr = schur.qr();
        let r = qr.r();
        let scale = r.diagonal().amax();
        if !(scale.is_finite() && scale > 0.0) || r.diagonal().iter().any(|d| d.abs() < RANK_TOL * scale) {
            return Err(Error::RankDeficientSchur { stage: stage.index });
        }
        Ok(CondensedFactor {
            stage,
            y,
            z,
            qr: Some(qr),
        })
    }

    /// Solves `R_w Δw = r` for one right-hand side.
    pub fn solve_vector(&self, r: &DVector<f64>) -> Option<DVector<f64>> {
        let s = self.stage;
        let (n, k) = (s.nq, 4 * s.nc);
        let rx = r.rows(0, n);
        let ry = r.rows(n, k);
        let rz = r.rows(n + k, k);
        let mut out = DVector::zeros(n + 2 * k);
        let dy = match &self.qr {
            Some(qr) => {
                let ry_tilde = ry - rz.component_div(&self.y);
                let rhs = &ry_tilde - &s.g_e_inv * rx;
                qr.solve(&rhs)?
            }
            None => DVector::zeros(0),
        };
        let dx = &s.e_inv * (rx - s.c.view((0, n), (n, k)) * &dy);
        let dz = (rz - self.z.component_mul(&dy)).component_div(&self.y);
        out.rows_mut(0, n).copy_from(&dx);
        out.rows_mut(n, k).copy_from(&dy);
        out.rows_mut(n + k, k).copy_from(&dz);
        Some(out)
    }
}

impl Factorization for CondensedFactor<'_> {
    fn solve_mut(&self, rhs: &mut DMatrix<f64>) -> bool {
        for j in 0..rhs.ncols() {
            match self.solve_vector(&rhs.column(j).into_owned()) {
                Some(col) if col.iter().all(|v| v.is_finite()) => rhs.set_column(j, &col),
                _ => return false,
            }
        }
        true
    }
}

/// `H̃ = H − diag(z / y)`.
pub fn reduced_h(stage: &StageLinearization, y: &DVector<f64>, z: &DVector<f64>) -> DMatrix<f64> {
    let mut h = stage.h();
    for j in 0..h.nrows() {
        h[(j, j)] -= z[j] / y[j];
    }
    h
}

/// Condensed solution of the stage Newton system at cone iterate `(y, z)`.
pub fn condensed_solve(
    stage: &StageLinearization,
    y: &DVector<f64>,
    z: &DVector<f64>,
    r: &DVector<f64>,
) -> Result<DVector<f64>> {
    let factor = CondensedFactor::new(stage, y.clone(), z.clone())?;
    factor
        .solve_vector(r)
        .ok_or(Error::RankDeficientSchur { stage: stage.index })
}
