use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CondensedFactor, StageLinearization};
use crate::contact::{check_len, ContactStepResult, ContactVariables, StepJacobians};
use crate::error::{Error, Result};
use crate::lcp::{self, DenseLu, Factorization, PathFollowingSettings, Partition, ResidualProgram};
use crate::linalg::stack;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearizedSettings {
    /// Fixed central-path parameter of the online solves.
    pub rho: f64,
    pub solver: PathFollowingSettings,
    /// Factorize the full Newton matrix with dense LU instead of the
    /// condensed Schur complement.
    pub dense: bool,
}

impl LinearizedSettings {
    pub fn new(rho: f64) -> Self {
        LinearizedSettings {
            rho,
            solver: PathFollowingSettings::fixed(rho),
            dense: false,
        }
    }
}

impl Default for LinearizedSettings {
    fn default() -> Self {
        LinearizedSettings::new(1e-4)
    }
}

/// Stage LCP at data `θ = (q_prev, q, u)`:
/// `r̄ + C (w − w̄) + D (θ − θ̄) − s = 0` with `s` a constant shift of the
/// gap rows, plus the bilinear rows.
pub struct LinearizedProgram<'a> {
    pub stage: &'a StageLinearization,
    pub dense: bool,
    offset: DVector<f64>,
}

impl<'a> LinearizedProgram<'a> {
    /// `gap_shift[i]` is subtracted from gap row `i`.
    pub fn new(stage: &'a StageLinearization, theta: &DVector<f64>, gap_shift: Option<&[f64]>) -> Result<Self> {
        check_len("theta", stage.theta_bar.len(), theta.len())?;
        let mut offset = &stage.r_bar - &stage.c * &stage.w_bar + &stage.d * (theta - &stage.theta_bar);
        if let Some(shift) = gap_shift {
            check_len("gap shift", stage.nc, shift.len())?;
            let layout = stage.layout();
            for (i, a) in shift.iter().enumerate() {
                offset[layout.gap_row(i)] -= a;
            }
        }
        Ok(LinearizedProgram {
            stage,
            dense: false,
            offset,
        })
    }

    pub fn with_dense(mut self, dense: bool) -> Self {
        self.dense = dense;
        self
    }
}

pub enum LinearizedFactor<'a> {
    Condensed(CondensedFactor<'a>),
    Dense(DenseLu),
}

impl Factorization for LinearizedFactor<'_> {
    fn solve_mut(&self, rhs: &mut DMatrix<f64>) -> bool {
        match self {
            LinearizedFactor::Condensed(f) => f.solve_mut(rhs),
            LinearizedFactor::Dense(f) => f.solve_mut(rhs),
        }
    }
}

impl<'a> ResidualProgram for LinearizedProgram<'a> {
    type Factor = LinearizedFactor<'a>;

    fn partition(&self) -> Partition {
        self.stage.layout().partition()
    }

    fn num_params(&self) -> usize {
        self.stage.theta_bar.len()
    }

    fn residual(&self, w: &DVector<f64>, rho: f64, out: &mut DVector<f64>) {
        let s = self.stage;
        let eq = s.c.nrows();
        out.rows_mut(0, eq).copy_from(&(&s.c * w + &self.offset));
        let k = 4 * s.nc;
        for j in 0..k {
            out[eq + j] = w[s.nq + j] * w[s.nq + k + j] - rho;
        }
    }

    fn jacobian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let s = self.stage;
        let len = w.len();
        let eq = s.c.nrows();
        let k = 4 * s.nc;
        let mut jac = DMatrix::zeros(len, len);
        jac.view_mut((0, 0), (eq, len)).copy_from(&s.c);
        for j in 0..k {
            jac[(eq + j, s.nq + j)] = w[s.nq + k + j];
            jac[(eq + j, s.nq + k + j)] = w[s.nq + j];
        }
        jac
    }

    fn factorize(&self, w: &DVector<f64>) -> Result<LinearizedFactor<'a>> {
        if self.dense {
            return Ok(LinearizedFactor::Dense(DenseLu::new(self.jacobian(w))?));
        }
        let s = self.stage;
        let k = 4 * s.nc;
        let y = w.rows(s.nq, k).into_owned();
        let z = w.rows(s.nq + k, k).into_owned();
        Ok(LinearizedFactor::Condensed(CondensedFactor::new(s, y, z)?))
    }

    fn parameter_jacobian(&self, _w: &DVector<f64>) -> DMatrix<f64> {
        let s = self.stage;
        let mut jac = DMatrix::zeros(s.c.ncols(), s.d.ncols());
        jac.view_mut((0, 0), (s.d.nrows(), s.d.ncols())).copy_from(&s.d);
        jac
    }
}

/// Solves the stage LCP, warm-started from `warm` or from the reference
/// point. This is the linearized step map `q_next = s_t(q_prev, q, u)`.
pub fn step_linearized(
    stage: &StageLinearization,
    q_prev: &DVector<f64>,
    q: &DVector<f64>,
    u: &DVector<f64>,
    gap_shift: Option<&[f64]>,
    warm: Option<&DVector<f64>>,
    settings: &LinearizedSettings,
) -> Result<ContactStepResult> {
    let theta = stack(&[q_prev, q, u]);
    let program = LinearizedProgram::new(stage, &theta, gap_shift)?.with_dense(settings.dense);
    let solver = PathFollowingSettings {
        rho_init: settings.rho,
        rho_target: settings.rho,
        rho_grad: settings.rho,
        ..settings.solver
    };
    let w0 = warm.unwrap_or(&stage.w_bar);
    let sol = match lcp::solve(&program, Some(w0), &solver) {
        Ok(sol) if sol.converged() => sol,
        Ok(sol) => {
            return Err(Error::NoConvergence {
                step: stage.index,
                residual: sol.residual_norm,
                rho: sol.rho,
            })
        }
        Err(e) => return Err(e),
    };
    let layout = stage.layout();
    let q_next = sol.w.rows(0, layout.n).into_owned();
    Ok(ContactStepResult {
        v_next: (&q_next - q) / stage.timestep,
        q_next,
        contact: ContactVariables::from_w(&layout, &sol.w),
        w: sol.w,
        iterations: sol.iterations,
        rho: sol.rho,
        residual_norm: sol.residual_norm,
    })
}

/// Sensitivities of the linearized step with respect to `(q_prev, q, u)`
/// at `rho_grad`. Only the configuration rows are returned.
#[allow(clippy::too_many_arguments)]
pub fn linearized_step_jacobians(
    stage: &StageLinearization,
    q_prev: &DVector<f64>,
    q: &DVector<f64>,
    u: &DVector<f64>,
    gap_shift: Option<&[f64]>,
    result: &ContactStepResult,
    rho_grad: f64,
    dense: bool,
) -> Result<StepJacobians> {
    let theta = stack(&[q_prev, q, u]);
    let program = LinearizedProgram::new(stage, &theta, gap_shift)?.with_dense(dense);
    let settings = PathFollowingSettings {
        rho_grad,
        ..PathFollowingSettings::fixed(rho_grad)
    };
    let sens = lcp::differentiate(&program, &result.w, result.rho, &settings)?;
    Ok(StepJacobians::from_sensitivity(stage.nq, stage.nu, &sens.jacobian, sens.least_squares))
}
