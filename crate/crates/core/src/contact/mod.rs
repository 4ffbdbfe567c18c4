//! Nonlinear hard-contact time stepping.
//!
//! One step finds `q_next` and the contact variables that satisfy the
//! impulse balance, gap, friction-cone and maximum-dissipation rows together
//! with the complementarity pairs `γ ∘ s_φ`, `ψ ∘ s_ψ`, `β ∘ η`. Steps are
//! solved with the path-following method of [`crate::lcp`] and differentiated
//! with respect to `(q_prev, q, u)`.

mod layout;
mod residual;
mod trajectory;

pub use layout::{ContactLayout, ContactVariables};
pub use residual::StepProgram;
pub use trajectory::{simulate, Disturbance, Trajectory, TrajectorySummary};

pub(crate) use residual::check_len;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lcp::{self, PathFollowingSettings, ResidualProgram};
use crate::model::{ModelSpec, Surface, TerrainProfile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSettings {
    pub solver: PathFollowingSettings,
    /// Floor applied to warm-started contact variables and slacks.
    pub warm_floor: f64,
}

impl Default for StepSettings {
    fn default() -> Self {
        StepSettings {
            solver: PathFollowingSettings::default(),
            warm_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContactStepResult {
    pub q_next: DVector<f64>,
    /// `(q_next − q) / h`.
    pub v_next: DVector<f64>,
    pub contact: ContactVariables,
    /// Full solution vector, usable as a warm start.
    pub w: DVector<f64>,
    pub iterations: usize,
    pub rho: f64,
    pub residual_norm: f64,
}

/// Residual of the step problem at `w`, including the bilinear rows.
pub fn assemble_residual(
    model: &ModelSpec,
    terrain: &TerrainProfile,
    q_prev: &DVector<f64>,
    q: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
    rho: f64,
) -> Result<DVector<f64>> {
    let program = StepProgram::new(model, terrain, q_prev, q, u)?;
    check_len("w", program.layout().len(), w.len())?;
    let mut out = DVector::zeros(w.len());
    program.residual(w, rho, &mut out);
    Ok(out)
}

/// Starting point: constant-velocity `q_next`, then either `y = z = 1` or
/// the previous step's contact variables with slacks recomputed from the
/// predicted gaps.
fn initial_point(
    program: &StepProgram,
    warm: Option<&ContactVariables>,
    floor: f64,
) -> DVector<f64> {
    let layout = program.layout();
    let mut w = layout.partition().default_point();
    let x0 = &program.q * 2.0 - &program.q_prev;
    w.rows_mut(0, layout.n).copy_from(&x0);
    if let Some(prev) = warm {
        let model = program.model;
        let phi = model.signed_distance(&x0, program.terrain);
        let mut vars = prev.clone();
        for v in vars
            .gamma
            .iter_mut()
            .chain(vars.beta.iter_mut())
            .chain(vars.psi.iter_mut())
            .chain(vars.eta.iter_mut())
        {
            *v = v.max(floor);
        }
        for i in 0..layout.c {
            vars.s_phi[i] = phi[i].max(floor);
            let margin = model.contacts[i].friction * vars.gamma[i] - vars.beta[2 * i] - vars.beta[2 * i + 1];
            vars.s_psi[i] = margin.max(floor);
        }
        vars.write_into(&layout, &mut w);
    }
    w
}

fn finish(program: &StepProgram, sol: lcp::SolveResult) -> ContactStepResult {
    let layout = program.layout();
    let q_next = sol.w.rows(0, layout.n).into_owned();
    let v_next = (&q_next - &program.q) / program.model.timestep;
    ContactStepResult {
        q_next,
        v_next,
        contact: ContactVariables::from_w(&layout, &sol.w),
        w: sol.w,
        iterations: sol.iterations,
        rho: sol.rho,
        residual_norm: sol.residual_norm,
    }
}

/// Solves one step of the given program. A failed warm-started solve is
/// retried from a cold start, then from cold starts with `rho_init` lowered
/// tenfold per attempt while it stays above `rho_target`.
pub fn solve_step(
    program: &StepProgram,
    warm: Option<&ContactVariables>,
    settings: &StepSettings,
) -> Result<ContactStepResult> {
    let mut spent = 0;
    let mut last = (f64::INFINITY, settings.solver.rho_init);
    let mut attempts: Vec<(Option<&ContactVariables>, f64)> = Vec::new();
    if warm.is_some() {
        attempts.push((warm, settings.solver.rho_init));
    }
    let mut rho = settings.solver.rho_init;
    attempts.push((None, rho));
    for _ in 0..3 {
        rho *= 0.1;
        if rho <= settings.solver.rho_target {
            break;
        }
        attempts.push((None, rho));
    }
    for (start, rho_init) in attempts {
        let w0 = initial_point(program, start, settings.warm_floor);
        let solver = PathFollowingSettings {
            rho_init,
            ..settings.solver
        };
        match lcp::solve(program, Some(&w0), &solver) {
            Ok(sol) if sol.converged() => {
                let mut out = finish(program, sol);
                out.iterations += spent;
                return Ok(out);
            }
            Ok(sol) => {
                spent += sol.iterations;
                last = (sol.residual_norm, sol.rho);
            }
            Err(Error::SingularJacobian) => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::NoConvergence {
        step: 0,
        residual: last.0,
        rho: last.1,
    })
}

/// One nonlinear contact step from `(q_prev, q)` under control impulse `u`.
pub fn step(
    model: &ModelSpec,
    terrain: &TerrainProfile,
    q_prev: &DVector<f64>,
    q: &DVector<f64>,
    u: &DVector<f64>,
    settings: &StepSettings,
) -> Result<ContactStepResult> {
    let program = StepProgram::new(model, terrain, q_prev, q, u)?;
    solve_step(&program, None, settings)
}

/// Sensitivities of `q_next` with respect to `(q_prev, q, u)`.
#[derive(Debug, Clone)]
pub struct StepJacobians {
    pub wrt_q_prev: DMatrix<f64>,
    pub wrt_q: DMatrix<f64>,
    pub wrt_u: DMatrix<f64>,
    /// Set when the residual Jacobian was singular.
    pub least_squares: bool,
}

impl StepJacobians {
    pub(crate) fn from_sensitivity(n: usize, m: usize, jac: &DMatrix<f64>, least_squares: bool) -> Self {
        StepJacobians {
            wrt_q_prev: jac.view((0, 0), (n, n)).into_owned(),
            wrt_q: jac.view((0, n), (n, n)).into_owned(),
            wrt_u: jac.view((0, 2 * n), (n, m)).into_owned(),
            least_squares,
        }
    }
}

/// Implicit-function-theorem sensitivities of a converged step, evaluated
/// at `rho_grad` after warm-started re-solving.
pub fn step_jacobians(
    model: &ModelSpec,
    terrain: &TerrainProfile,
    q_prev: &DVector<f64>,
    q: &DVector<f64>,
    u: &DVector<f64>,
    result: &ContactStepResult,
    rho_grad: f64,
) -> Result<StepJacobians> {
    let program = StepProgram::new(model, terrain, q_prev, q, u)?;
    let settings = PathFollowingSettings {
        rho_grad,
        ..Default::default()
    };
    let sens = lcp::differentiate(&program, &result.w, result.rho, &settings)?;
    Ok(StepJacobians::from_sensitivity(model.nq, model.nu, &sens.jacobian, sens.least_squares))
}

/// Vertical base offset that lifts every ground contact to `φ ≥ 0`.
pub fn penetration_correction(model: &ModelSpec, terrain: &TerrainProfile, q: &DVector<f64>) -> f64 {
    let phi = model.signed_distance(q, terrain);
    model
        .contacts
        .iter()
        .zip(phi.iter())
        .filter(|(cp, _)| cp.surface == Surface::Ground)
        .map(|(_, &p)| (-p).max(0.0))
        .fold(0.0, f64::max)
}
