//! Tracking trajectory optimization over lifted states `x_t = (q_{t−1}, q_t)`.
//!
//! The window has a fixed initial state `x_1`, controls `u_1 … u_{H−1}` and
//! states `x_2 … x_H`, coupled by `x_{t+1} = (q_t, s_t(q_{t−1}, q_t, u_t))`.
//! Each Gauss-Newton iteration linearizes the stage maps and solves the KKT
//! system through the block-tridiagonal Schur complement `Y = C W⁻¹ Cᵀ`.

mod kkt;

pub use kkt::{
    apply_c, apply_ct, assemble_y, block_cholesky, solve_kkt, CholeskyBlocks, KktBlocks, YBlocks,
};

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Primal variables of a window: `u[k] = u_{k+1}` and `x[k] = x_{k+2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub u: Vec<DVector<f64>>,
    pub x: Vec<DVector<f64>>,
}

impl Plan {
    pub fn stages(&self) -> usize {
        self.u.len()
    }

    pub fn zeros_like(&self) -> Plan {
        Plan {
            u: self.u.iter().map(|v| DVector::zeros(v.len())).collect(),
            x: self.x.iter().map(|v| DVector::zeros(v.len())).collect(),
        }
    }

    pub fn add(&self, other: &Plan) -> Plan {
        Plan {
            u: self.u.iter().zip(&other.u).map(|(a, b)| a + b).collect(),
            x: self.x.iter().zip(&other.x).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Plan) -> Plan {
        Plan {
            u: self.u.iter().zip(&other.u).map(|(a, b)| a - b).collect(),
            x: self.x.iter().zip(&other.x).map(|(a, b)| a - b).collect(),
        }
    }

    /// `self − alpha · step`.
    pub fn stepped(&self, step: &Plan, alpha: f64) -> Plan {
        Plan {
            u: self.u.iter().zip(&step.u).map(|(a, b)| a - b * alpha).collect(),
            x: self.x.iter().zip(&step.x).map(|(a, b)| a - b * alpha).collect(),
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.u.iter().chain(&self.x).map(|v| v.norm_squared()).sum()
    }

    /// Stacks as `z = (u_1, x_2, …, u_{H−1}, x_H)`.
    pub fn to_flat(&self) -> DVector<f64> {
        let parts: Vec<&DVector<f64>> = self.u.iter().zip(&self.x).flat_map(|(u, x)| [u, x]).collect();
        crate::linalg::stack(&parts)
    }

    pub fn from_flat(z: &DVector<f64>, nu: usize, nx: usize) -> Plan {
        let stages = z.len() / (nu + nx);
        let mut plan = Plan { u: vec![], x: vec![] };
        for k in 0..stages {
            let at = k * (nu + nx);
            plan.u.push(z.rows(at, nu).into_owned());
            plan.x.push(z.rows(at + nu, nx).into_owned());
        }
        plan
    }

    /// Drops the first stage and repeats the last one.
    pub fn shifted(&self) -> Plan {
        let shift = |v: &Vec<DVector<f64>>| {
            let mut out: Vec<DVector<f64>> = v.iter().skip(1).cloned().collect();
            if let Some(last) = v.last() {
                out.push(last.clone());
            }
            out
        };
        Plan {
            u: shift(&self.u),
            x: shift(&self.x),
        }
    }
}

/// Block-diagonal objective Hessian `W = blockdiag(R_1, Q_2, …, R_{H−1}, Q_H)`
/// and its inverse, formed once.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub q_inv: Vec<DMatrix<f64>>,
    pub r_inv: Vec<DMatrix<f64>>,
}

fn spd_inverse(m: &DMatrix<f64>, what: &'static str, k: usize) -> Result<DMatrix<f64>> {
    if !m.is_square() || (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(Error::validation(what, format!("block {k} is not symmetric")));
    }
    Cholesky::new(m.clone())
        .map(|c| c.inverse())
        .ok_or_else(|| Error::validation(what, format!("block {k} is not positive definite")))
}

impl Weights {
    /// `q[k]` weighs `x_{k+2}`, `r[k]` weighs `u_{k+1}`.
    pub fn new(q: Vec<DMatrix<f64>>, r: Vec<DMatrix<f64>>) -> Result<Self> {
        if q.len() != r.len() || q.is_empty() {
            return Err(Error::validation("weights", "need one state and one control weight per stage"));
        }
        let q_inv = q.iter().enumerate().map(|(k, m)| spd_inverse(m, "state weight", k)).collect::<Result<_>>()?;
        let r_inv = r.iter().enumerate().map(|(k, m)| spd_inverse(m, "control weight", k)).collect::<Result<_>>()?;
        Ok(Weights { q, r, q_inv, r_inv })
    }

    /// Same weights at every stage, with `terminal` on the last state.
    pub fn uniform(stages: usize, q: &DMatrix<f64>, terminal: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<Self> {
        let mut qs = vec![q.clone(); stages];
        if let Some(last) = qs.last_mut() {
            *last = terminal.clone();
        }
        Weights::new(qs, vec![r.clone(); stages])
    }

    pub fn stages(&self) -> usize {
        self.q.len()
    }

    pub fn apply(&self, v: &Plan) -> Plan {
        Plan {
            u: self.r.iter().zip(&v.u).map(|(m, a)| m * a).collect(),
            x: self.q.iter().zip(&v.x).map(|(m, a)| m * a).collect(),
        }
    }

    pub fn apply_inverse(&self, v: &Plan) -> Plan {
        Plan {
            u: self.r_inv.iter().zip(&v.u).map(|(m, a)| m * a).collect(),
            x: self.q_inv.iter().zip(&v.x).map(|(m, a)| m * a).collect(),
        }
    }
}

/// Lifted-state weight on `(q_{t−1}, q_t)` penalizing `q_t − q̄_t` with
/// `q_weight` and the velocity `(q_t − q_{t−1})/h` deviation with
/// `v_weight`. Both penalties live inside one lifted state, so they add no
/// coupling between stages.
pub fn lifted_weight(q_weight: &DVector<f64>, v_weight: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = q_weight.len();
    let qv = DMatrix::from_diagonal(&(v_weight / (h * h)));
    let mut w = DMatrix::zeros(2 * n, 2 * n);
    w.view_mut((0, 0), (n, n)).copy_from(&qv);
    w.view_mut((0, n), (n, n)).copy_from(&(-&qv));
    w.view_mut((n, 0), (n, n)).copy_from(&(-&qv));
    w.view_mut((n, n), (n, n)).copy_from(&(DMatrix::from_diagonal(q_weight) + &qv));
    w
}

/// One stage map evaluation.
#[derive(Debug, Clone)]
pub struct StageEval {
    pub q_next: DVector<f64>,
    /// `(∂/∂q_prev, ∂/∂q, ∂/∂u)` when requested.
    pub jacobians: Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)>,
    /// Solver state to warm-start the next evaluation of this stage.
    pub warm: Option<DVector<f64>>,
}

/// Stage maps `q_{t+1} = s_t(q_{t−1}, q_t, u_t)` over a window.
pub trait StageDynamics {
    fn nq(&self) -> usize;
    fn nu(&self) -> usize;
    /// Number of stages `H − 1`.
    fn stages(&self) -> usize;
    fn evaluate(
        &self,
        k: usize,
        q_prev: &DVector<f64>,
        q: &DVector<f64>,
        u: &DVector<f64>,
        warm: Option<&DVector<f64>>,
        jacobians: bool,
    ) -> Result<StageEval>;
}

/// Constraint values and lifted Jacobians of a plan.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub d: Vec<DVector<f64>>,
    pub blocks: Option<KktBlocks>,
    pub warm: Vec<Option<DVector<f64>>>,
}

/// Evaluates `d_k = x_{k+2} − (q_{k+1}, s_k(q_k, q_{k+1}, u_k))` and,
/// optionally, the lifted blocks `A_k = [[0, I], [∂s/∂q_prev, ∂s/∂q]]`,
/// `B_k = [[0], [∂s/∂u]]`.
pub fn evaluate_constraints<D: StageDynamics>(
    dynamics: &D,
    x_init: &DVector<f64>,
    plan: &Plan,
    warm: &[Option<DVector<f64>>],
    jacobians: bool,
) -> Result<Linearization> {
    let n = dynamics.nq();
    let m = dynamics.nu();
    let s = plan.stages();
    let mut out = Linearization {
        d: Vec::with_capacity(s),
        blocks: jacobians.then(|| KktBlocks {
            a: Vec::with_capacity(s),
            b: Vec::with_capacity(s),
        }),
        warm: Vec::with_capacity(s),
    };
    for k in 0..s {
        let x_prev = if k == 0 { x_init } else { &plan.x[k - 1] };
        let q_prev = x_prev.rows(0, n).into_owned();
        let q = x_prev.rows(n, n).into_owned();
        let eval = dynamics
            .evaluate(k, &q_prev, &q, &plan.u[k], warm.get(k).and_then(|w| w.as_ref()), jacobians)
            .map_err(|e| match e {
                Error::NoConvergence { residual, rho, .. } => Error::NoConvergence { step: k, residual, rho },
                other => other,
            })?;
        let mut d = plan.x[k].clone();
        {
            let mut top = d.rows_mut(0, n);
            top -= &q;
        }
        {
            let mut bottom = d.rows_mut(n, n);
            bottom -= &eval.q_next;
        }
        out.d.push(d);
        if let (Some(blocks), Some((jp, jq, ju))) = (out.blocks.as_mut(), eval.jacobians) {
            let mut a = DMatrix::zeros(2 * n, 2 * n);
            a.view_mut((0, n), (n, n)).fill_with_identity();
            a.view_mut((n, 0), (n, n)).copy_from(&jp);
            a.view_mut((n, n), (n, n)).copy_from(&jq);
            let mut b = DMatrix::zeros(2 * n, m);
            b.view_mut((n, 0), (n, m)).copy_from(&ju);
            blocks.a.push(a);
            blocks.b.push(b);
        }
        out.warm.push(eval.warm);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingSettings {
    pub max_iterations: usize,
    pub tol_kkt: f64,
    pub max_backtracks: usize,
}

impl Default for TrackingSettings {
    fn default() -> Self {
        TrackingSettings {
            max_iterations: 5,
            tol_kkt: 1e-3,
            max_backtracks: 8,
        }
    }
}

/// Tracking problem over one window.
pub struct TrackingProblem<'a, D: StageDynamics> {
    pub dynamics: &'a D,
    pub weights: &'a Weights,
    /// `x_1 = (q_0, q_1)`.
    pub x_init: DVector<f64>,
    /// Targets for `x_2 … x_H`.
    pub x_ref: Vec<DVector<f64>>,
    /// Targets for `u_1 … u_{H−1}`.
    pub u_ref: Vec<DVector<f64>>,
}

impl<D: StageDynamics> TrackingProblem<'_, D> {
    pub fn cost(&self, plan: &Plan) -> f64 {
        let dev = self.deviation(plan);
        let wd = self.weights.apply(&dev);
        0.5 * dev.u.iter().zip(&wd.u).chain(dev.x.iter().zip(&wd.x)).map(|(a, b)| a.dot(b)).sum::<f64>()
    }

    fn deviation(&self, plan: &Plan) -> Plan {
        Plan {
            u: plan.u.iter().zip(&self.u_ref).map(|(a, b)| a - b).collect(),
            x: plan.x.iter().zip(&self.x_ref).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn gradient(&self, plan: &Plan) -> Plan {
        self.weights.apply(&self.deviation(plan))
    }

    /// Reference plan used when no warm start is available.
    pub fn reference_plan(&self) -> Plan {
        Plan {
            u: self.u_ref.clone(),
            x: self.x_ref.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        let s = self.dynamics.stages();
        let nx = 2 * self.dynamics.nq();
        if self.weights.stages() != s || self.x_ref.len() != s || self.u_ref.len() != s {
            return Err(Error::validation("tracking problem", "window lengths disagree"));
        }
        crate::contact::check_len("x_init", nx, self.x_init.len())
    }
}

/// Primal-dual iterate with its KKT diagnostics.
#[derive(Debug, Clone)]
pub struct TrackingResult {
    pub plan: Plan,
    /// Dynamics multipliers.
    pub nu: Vec<DVector<f64>>,
    pub warm: Vec<Option<DVector<f64>>>,
    pub iterations: usize,
    pub kkt_norm: f64,
    pub kkt_history: Vec<f64>,
    pub cost_history: Vec<f64>,
    pub converged: bool,
}

impl TrackingResult {
    pub fn first_control(&self) -> &DVector<f64> {
        &self.plan.u[0]
    }
}

/// Initial iterate: plan, multipliers and per-stage solver warm starts.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub plan: Plan,
    pub nu: Vec<DVector<f64>>,
    pub stage_warm: Vec<Option<DVector<f64>>>,
}

impl WarmStart {
    /// Shift by one stage and repeat the last stage.
    pub fn from_previous(result: &TrackingResult) -> WarmStart {
        let mut nu: Vec<DVector<f64>> = result.nu.iter().skip(1).cloned().collect();
        nu.extend(result.nu.last().cloned());
        let mut stage_warm: Vec<Option<DVector<f64>>> = result.warm.iter().skip(1).cloned().collect();
        stage_warm.extend(result.warm.last().cloned());
        WarmStart {
            plan: result.plan.shifted(),
            nu,
            stage_warm,
        }
    }
}

fn kkt_norm(g: &Plan, d: &[DVector<f64>]) -> f64 {
    (g.norm_squared() + d.iter().map(|v| v.norm_squared()).sum::<f64>()).sqrt()
}

struct Iterate {
    plan: Plan,
    nu: Vec<DVector<f64>>,
    lin: Linearization,
    kkt: f64,
}

fn build_iterate<D: StageDynamics>(
    problem: &TrackingProblem<D>,
    plan: Plan,
    nu: Vec<DVector<f64>>,
    warm: &[Option<DVector<f64>>],
) -> Result<Iterate> {
    let lin = evaluate_constraints(problem.dynamics, &problem.x_init, &plan, warm, true)?;
    let blocks = lin.blocks.as_ref().expect("jacobians requested");
    let g = problem.gradient(&plan).add(&apply_ct(blocks, &nu));
    let kkt = kkt_norm(&g, &lin.d);
    Ok(Iterate { plan, nu, lin, kkt })
}

/// Gauss-Newton tracking solve. Returns the best iterate; `converged` is
/// false when the iteration cap or the line search stopped early.
pub fn solve_tracking<D: StageDynamics>(
    problem: &TrackingProblem<D>,
    warm: Option<&WarmStart>,
    settings: &TrackingSettings,
) -> Result<TrackingResult> {
    problem.validate()?;
    let s = problem.dynamics.stages();
    let nx = 2 * problem.dynamics.nq();
    let (plan, nu, stage_warm) = match warm {
        Some(w) if w.plan.stages() == s => (w.plan.clone(), w.nu.clone(), w.stage_warm.clone()),
        _ => (problem.reference_plan(), vec![DVector::zeros(nx); s], vec![None; s]),
    };
    let mut it = build_iterate(problem, plan, nu, &stage_warm)?;
    let mut kkt_history = vec![it.kkt];
    let mut cost_history = vec![problem.cost(&it.plan)];
    let mut iterations = 0;
    let mut converged = it.kkt < settings.tol_kkt;

    while !converged && iterations < settings.max_iterations {
        iterations += 1;
        let blocks = it.lin.blocks.as_ref().expect("jacobians requested");
        let g = problem.gradient(&it.plan).add(&apply_ct(blocks, &it.nu));
        let y = assemble_y(blocks, problem.weights);
        let chol = block_cholesky(&y)?;
        let (dz, dnu) = solve_kkt(blocks, problem.weights, &chol, &g, &it.lin.d);

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_backtracks {
            let plan = it.plan.stepped(&dz, alpha);
            let nu: Vec<DVector<f64>> = it.nu.iter().zip(&dnu).map(|(a, b)| a - b * alpha).collect();
            if let Ok(trial) = build_iterate(problem, plan, nu, &it.lin.warm) {
                if trial.kkt < it.kkt {
                    accepted = Some(trial);
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some(trial) => {
                it = trial;
                kkt_history.push(it.kkt);
                cost_history.push(problem.cost(&it.plan));
                converged = it.kkt < settings.tol_kkt;
            }
            None => break,
        }
    }

    Ok(TrackingResult {
        kkt_norm: it.kkt,
        warm: it.lin.warm,
        plan: it.plan,
        nu: it.nu,
        iterations,
        kkt_history,
        cost_history,
        converged,
    })
}

#[cfg(test)]
mod tests;
