//! Path-following solver for residual programs with complementarity pairs.
//!
//! A program has decision variables `w = (x, y, z)` where `x` is free and
//! `y, z ≥ 0` form complementarity pairs. Its residual stacks the equality
//! rows followed by the relaxed bilinear rows `y ∘ z − ρ 1`. The solver
//! follows the central path `ρ → ρ_target` with Newton steps
//! `w ← w − α (∂r/∂w)⁻¹ r`, and solutions are differentiated with respect to
//! the problem data by the implicit-function theorem.

mod mlcp;
mod trace;

pub use mlcp::MlcpProgram;
pub use trace::{write_trace_csv, TraceRow};

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathFollowingSettings {
    /// Line-search backtracking factor.
    pub backtrack: f64,
    /// Central-path reduction factor.
    pub central_path_reduction: f64,
    pub rho_init: f64,
    pub rho_target: f64,
    pub residual_tol: f64,
    /// Central-path parameter at which sensitivities are evaluated.
    pub rho_grad: f64,
    /// Cone variables may shrink by at most this fraction in one step.
    pub fraction_to_boundary: f64,
    pub max_inner: usize,
    pub max_stages: usize,
    pub max_backtracks: usize,
    pub trace: bool,
}

impl Default for PathFollowingSettings {
    fn default() -> Self {
        PathFollowingSettings {
            backtrack: 0.5,
            central_path_reduction: 0.1,
            rho_init: 0.1,
            rho_target: 1e-6,
            residual_tol: 1e-8,
            rho_grad: 1e-4,
            fraction_to_boundary: 0.995,
            max_inner: 100,
            max_stages: 20,
            max_backtracks: 50,
            trace: false,
        }
    }
}

impl PathFollowingSettings {
    /// Single central-path stage at a fixed `rho`.
    pub fn fixed(rho: f64) -> Self {
        PathFollowingSettings {
            rho_init: rho,
            rho_target: rho,
            rho_grad: rho,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.backtrack) || !unit(self.central_path_reduction) || !unit(self.fraction_to_boundary) {
            return Err(Error::validation("solver settings", "factors must lie in (0, 1)"));
        }
        if !(self.rho_target > 0.0 && self.rho_init >= self.rho_target && self.residual_tol > 0.0 && self.rho_grad > 0.0)
        {
            return Err(Error::validation(
                "solver settings",
                "need 0 < rho_target <= rho_init, residual_tol > 0 and rho_grad > 0",
            ));
        }
        Ok(())
    }
}

/// Sizes of the free block `x` and of each complementarity block `y`, `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    pub primal: usize,
    pub cone: usize,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.primal + 2 * self.cone
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn y_range(&self) -> std::ops::Range<usize> {
        self.primal..self.primal + self.cone
    }

    pub fn z_range(&self) -> std::ops::Range<usize> {
        self.primal + self.cone..self.len()
    }

    /// `x = 0`, `y = z = 1`.
    pub fn default_point(&self) -> DVector<f64> {
        let mut w = DVector::from_element(self.len(), 1.0);
        w.rows_mut(0, self.primal).fill(0.0);
        w
    }

    pub fn cone_is_interior(&self, w: &DVector<f64>) -> bool {
        w.rows(self.primal, 2 * self.cone).iter().all(|&v| v > 0.0)
    }
}

/// A factorized residual Jacobian `∂r/∂w`.
pub trait Factorization {
    /// Overwrites `rhs` with `(∂r/∂w)⁻¹ rhs`. Returns false if the solve
    /// produced non-finite values.
    fn solve_mut(&self, rhs: &mut DMatrix<f64>) -> bool;
}

/// Residual `r(w; θ, ρ)` with its derivatives. The problem data θ is held by
/// the implementor.
pub trait ResidualProgram {
    type Factor: Factorization;

    fn partition(&self) -> Partition;

    fn num_params(&self) -> usize;

    fn residual(&self, w: &DVector<f64>, rho: f64, out: &mut DVector<f64>);

    /// Dense `∂r/∂w` (independent of ρ).
    fn jacobian(&self, w: &DVector<f64>) -> DMatrix<f64>;

    /// Factorization of `∂r/∂w` used for Newton steps and sensitivities.
    fn factorize(&self, w: &DVector<f64>) -> Result<Self::Factor>;

    /// `∂r/∂θ`.
    fn parameter_jacobian(&self, w: &DVector<f64>) -> DMatrix<f64>;
}

/// Dense LU with partial pivoting.
pub struct DenseLu(LU<f64, Dyn, Dyn>);

impl DenseLu {
    pub fn new(jac: DMatrix<f64>) -> Result<Self> {
        let lu = jac.lu();
        if !lu.is_invertible() {
            return Err(Error::SingularJacobian);
        }
        Ok(DenseLu(lu))
    }
}

impl Factorization for DenseLu {
    fn solve_mut(&self, rhs: &mut DMatrix<f64>) -> bool {
        self.0.solve_mut(rhs) && rhs.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub w: DVector<f64>,
    /// Central-path parameter of the last stage.
    pub rho: f64,
    pub residual_norm: f64,
    /// Newton iterations over all stages.
    pub iterations: usize,
    pub stages: usize,
    pub status: Status,
    pub trace: Vec<TraceRow>,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

fn residual_norm<P: ResidualProgram>(program: &P, w: &DVector<f64>, rho: f64, buf: &mut DVector<f64>) -> f64 {
    program.residual(w, rho, buf);
    let norm = buf.norm();
    if norm.is_finite() {
        norm
    } else {
        f64::INFINITY
    }
}

/// Follows the central path from `settings.rho_init` down to
/// `settings.rho_target`. Each stage is solved to `residual_tol` before ρ is
/// reduced, including the last one.
pub fn solve<P: ResidualProgram>(
    program: &P,
    init: Option<&DVector<f64>>,
    settings: &PathFollowingSettings,
) -> Result<SolveResult> {
    settings.validate()?;
    let part = program.partition();
    let mut w = match init {
        Some(w0) => {
            if w0.len() != part.len() {
                return Err(Error::DimensionMismatch {
                    context: "initial point",
                    expected: part.len(),
                    actual: w0.len(),
                });
            }
            if !part.cone_is_interior(w0) {
                return Err(Error::validation("initial point", "cone variables must be strictly positive"));
            }
            w0.clone()
        }
        None => part.default_point(),
    };

    let cone = part.primal..part.len();
    let mut rho = settings.rho_init;
    let mut r = DVector::zeros(part.len());
    let mut trial = w.clone();
    let mut trial_r = DVector::zeros(part.len());
    let mut norm = residual_norm(program, &w, rho, &mut r);
    let mut iterations = 0;
    let mut stages = 1;
    let mut trace = Vec::new();
    if settings.trace {
        trace.push(TraceRow {
            iteration: 0,
            rho,
            residual: norm,
            step: 0.0,
        });
    }

    let finish = |w: DVector<f64>, rho, norm, iterations, stages, status, trace| {
        Ok(SolveResult {
            w,
            rho,
            residual_norm: norm,
            iterations,
            stages,
            status,
            trace,
        })
    };

    loop {
        let mut inner = 0;
        while norm >= settings.residual_tol {
            if inner == settings.max_inner {
                return finish(w, rho, norm, iterations, stages, Status::MaxIterations, trace);
            }
            inner += 1;
            iterations += 1;

            let factor = program.factorize(&w)?;
            let mut dw = DMatrix::from_column_slice(part.len(), 1, r.as_slice());
            if !factor.solve_mut(&mut dw) {
                return Err(Error::SingularJacobian);
            }
            let dw = dw.column(0);

            let mut alpha = 1.0;
            let keep = 1.0 - settings.fraction_to_boundary;
            while cone
                .clone()
                .any(|i| w[i] - alpha * dw[i] < keep * w[i])
            {
                alpha *= settings.backtrack;
            }

            let mut accepted = false;
            for _ in 0..settings.max_backtracks {
                trial.copy_from(&w);
                trial.axpy(-alpha, &dw, 1.0);
                let trial_norm = residual_norm(program, &trial, rho, &mut trial_r);
                if trial_norm < norm {
                    std::mem::swap(&mut w, &mut trial);
                    std::mem::swap(&mut r, &mut trial_r);
                    norm = trial_norm;
                    accepted = true;
                    break;
                }
                alpha *= settings.backtrack;
            }
            if settings.trace {
                trace.push(TraceRow {
                    iteration: iterations,
                    rho,
                    residual: norm,
                    step: if accepted { alpha } else { 0.0 },
                });
            }
            if !accepted {
                return finish(w, rho, norm, iterations, stages, Status::LineSearchFailed, trace);
            }
        }

        if rho <= settings.rho_target * (1.0 + 1e-12) {
            return finish(w, rho, norm, iterations, stages, Status::Converged, trace);
        }
        if stages == settings.max_stages {
            return finish(w, rho, norm, iterations, stages, Status::MaxIterations, trace);
        }
        rho *= settings.central_path_reduction;
        if rho <= settings.rho_target * (1.0 + 1e-9) {
            rho = settings.rho_target;
        }
        stages += 1;
        norm = residual_norm(program, &w, rho, &mut r);
    }
}

/// Solution sensitivity `∂w*/∂θ`.
#[derive(Debug, Clone)]
pub struct Sensitivity {
    /// Point at which the sensitivity was evaluated (re-solved at `rho`).
    pub w: DVector<f64>,
    pub rho: f64,
    pub jacobian: DMatrix<f64>,
    /// Set when `∂r/∂w` was singular and a least-squares solution was returned.
    pub least_squares: bool,
}

/// Implicit-function-theorem sensitivities `−(∂r/∂w)⁻¹ ∂r/∂θ` at
/// `settings.rho_grad`. A solution found at a different ρ is first re-solved
/// at `rho_grad`, warm-started from `w`.
pub fn differentiate<P: ResidualProgram>(
    program: &P,
    w: &DVector<f64>,
    rho: f64,
    settings: &PathFollowingSettings,
) -> Result<Sensitivity> {
    let mut point = w.clone();
    if (rho - settings.rho_grad).abs() > 1e-12 * settings.rho_grad {
        let resolve = PathFollowingSettings {
            rho_init: settings.rho_grad,
            rho_target: settings.rho_grad,
            trace: false,
            ..*settings
        };
        point = solve(program, Some(w), &resolve)?.w;
    }
    sensitivity_at(program, point, settings.rho_grad)
}

/// Sensitivities at a point without re-solving.
pub fn sensitivity_at<P: ResidualProgram>(program: &P, w: DVector<f64>, rho: f64) -> Result<Sensitivity> {
    let mut rhs = -program.parameter_jacobian(&w);
    let solved = match program.factorize(&w) {
        Ok(factor) => factor.solve_mut(&mut rhs),
        Err(Error::SingularJacobian | Error::RankDeficientSchur { .. }) => false,
        Err(e) => return Err(e),
    };
    if solved {
        return Ok(Sensitivity {
            w,
            rho,
            jacobian: rhs,
            least_squares: false,
        });
    }
    let rhs = -program.parameter_jacobian(&w);
    let svd = program.jacobian(&w).svd(true, true);
    let jacobian = svd
        .solve(&rhs, 1e-12)
        .map_err(|_| Error::SingularJacobian)?;
    Ok(Sensitivity {
        w,
        rho,
        jacobian,
        least_squares: true,
    })
}
