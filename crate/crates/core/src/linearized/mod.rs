//! Linearized contact dynamics about a reference trajectory.
//!
//! Each stage replaces the equality rows of the step residual by their
//! first-order expansion
//!
//! ```text
//! r̄ + C (w − w̄) + D (θ − θ̄) = 0,   y ∘ z = ρ 1,
//! ```
//!
//! keeping the complementarity structure. All blocks that do not depend on
//! the current cone iterate (`E⁻¹`, `G E⁻¹`, `G E⁻¹ F`) are computed once
//! offline; the online Newton step only factorizes the `4c × 4c` Schur
//! complement.

mod cache;
mod condensed;
mod program;

pub use cache::{cache_key, LinearizationCache};
pub use condensed::{condensed_solve, reduced_h, CondensedFactor};
pub use program::{
    linearized_step_jacobians, step_linearized, LinearizedFactor, LinearizedProgram, LinearizedSettings,
};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::{ContactLayout, ContactVariables, StepProgram};
use crate::error::{Error, Result};
use crate::linalg::stack;
use crate::model::{ModelSpec, TerrainProfile};
use crate::mpc::ReferenceTrajectory;

/// Floor applied to reference impulses and duals before linearization.
pub const FORCE_FLOOR: f64 = 1e-3;
/// Floor applied to reference slacks before linearization.
pub const SLACK_FLOOR: f64 = 1e-3;
/// Tikhonov term added to a singular impulse block.
pub const E_REGULARIZATION: f64 = 1e-8;

/// Offline data of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLinearization {
    pub index: usize,
    pub nq: usize,
    pub nc: usize,
    pub nu: usize,
    pub timestep: f64,
    /// Linearization point `(q̄_{t+1}, γ̄, ψ̄, β̄, s̄_φ, s̄_ψ, η̄)` after flooring.
    pub w_bar: DVector<f64>,
    /// `(q̄_{t−1}, q̄_t, ū_t)`.
    pub theta_bar: DVector<f64>,
    /// Equality residual at the linearization point.
    pub r_bar: DVector<f64>,
    /// `∂r_eq/∂w`, `[[E, F, 0], [G, H, I]]`.
    pub c: DMatrix<f64>,
    /// `∂r_eq/∂θ`.
    pub d: DMatrix<f64>,
    pub e_inv: DMatrix<f64>,
    pub g_e_inv: DMatrix<f64>,
    pub g_e_inv_f: DMatrix<f64>,
    /// Set when `E` needed Tikhonov regularization.
    pub regularized: bool,
}

impl StageLinearization {
    /// Builds a stage from its equality Jacobians and precomputes the
    /// offline blocks. A numerically singular `E` is regularized.
    #[allow(clippy::too_many_arguments)]
    pub fn from_blocks(
        index: usize,
        nu: usize,
        timestep: f64,
        w_bar: DVector<f64>,
        theta_bar: DVector<f64>,
        r_bar: DVector<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let eq = c.nrows();
        let nc = (c.ncols() - eq) / 4;
        let n = eq - 4 * nc;
        if c.ncols() != n + 8 * nc || w_bar.len() != c.ncols() || r_bar.len() != eq || d.nrows() != eq {
            return Err(Error::validation("stage", "inconsistent block dimensions"));
        }
        let e = c.view((0, 0), (n, n)).into_owned();
        let (e_inv, regularized) = match invert(&e) {
            Some(inv) => (inv, false),
            None => {
                warn!("stage {index}: singular impulse block, adding {E_REGULARIZATION:e} regularization");
                let reg = &e + DMatrix::identity(n, n) * E_REGULARIZATION;
                (invert(&reg).ok_or(Error::SingularE { stage: index })?, true)
            }
        };
        let g_e_inv = c.view((n, 0), (4 * nc, n)) * &e_inv;
        let g_e_inv_f = &g_e_inv * c.view((0, n), (n, 4 * nc));
        Ok(StageLinearization {
            index,
            nq: n,
            nc,
            nu,
            timestep,
            w_bar,
            theta_bar,
            r_bar,
            c,
            d,
            e_inv,
            g_e_inv,
            g_e_inv_f,
            regularized,
        })
    }

    pub fn layout(&self) -> ContactLayout {
        ContactLayout::new(self.nq, self.nc)
    }

    pub fn e(&self) -> DMatrix<f64> {
        self.c.view((0, 0), (self.nq, self.nq)).into_owned()
    }

    pub fn f(&self) -> DMatrix<f64> {
        self.c.view((0, self.nq), (self.nq, 4 * self.nc)).into_owned()
    }

    pub fn g(&self) -> DMatrix<f64> {
        self.c.view((self.nq, 0), (4 * self.nc, self.nq)).into_owned()
    }

    pub fn h(&self) -> DMatrix<f64> {
        self.c.view((self.nq, self.nq), (4 * self.nc, 4 * self.nc)).into_owned()
    }

    /// Reference configuration `q̄_{t+1}`.
    pub fn q_next_bar(&self) -> DVector<f64> {
        self.w_bar.rows(0, self.nq).into_owned()
    }
}

/// Contact variables with impulses and duals floored at [`FORCE_FLOOR`] and
/// slacks recomputed from the reference gaps and floored at [`SLACK_FLOOR`].
pub fn floor_contact(model: &ModelSpec, terrain: &TerrainProfile, q_next: &DVector<f64>, vars: &ContactVariables) -> ContactVariables {
    let mut out = vars.clone();
    for v in out
        .gamma
        .iter_mut()
        .chain(out.beta.iter_mut())
        .chain(out.psi.iter_mut())
        .chain(out.eta.iter_mut())
    {
        *v = v.max(FORCE_FLOOR);
    }
    let phi = model.signed_distance(q_next, terrain);
    for i in 0..model.num_contacts() {
        out.s_phi[i] = phi[i].max(SLACK_FLOOR);
        let margin = model.contacts[i].friction * out.gamma[i] - out.beta[2 * i] - out.beta[2 * i + 1];
        out.s_psi[i] = margin.max(SLACK_FLOOR);
    }
    out
}

/// Linearizes one stage about `(q̄_{t−1}, q̄_t, ū_t) → (q̄_{t+1}, λ̄_t)`.
#[allow(clippy::too_many_arguments)]
pub fn linearize_stage(
    model: &ModelSpec,
    terrain: &TerrainProfile,
    index: usize,
    q_prev: &DVector<f64>,
    q: &DVector<f64>,
    u: &DVector<f64>,
    q_next: &DVector<f64>,
    contact: &ContactVariables,
) -> Result<StageLinearization> {
    let program = StepProgram::new(model, terrain, q_prev, q, u)?;
    let layout = program.layout();
    crate::contact::check_len("q_next", layout.n, q_next.len())?;
    let mut w_bar = DVector::zeros(layout.len());
    w_bar.rows_mut(0, layout.n).copy_from(q_next);
    floor_contact(model, terrain, q_next, contact).write_into(&layout, &mut w_bar);

    let mut r_bar = DVector::zeros(layout.num_equality());
    program.equality_residual(&w_bar, &mut r_bar);
    let c = program.equality_jacobian(&w_bar);
    let d = program.equality_parameter_jacobian(&w_bar);
    StageLinearization::from_blocks(index, model.nu, model.timestep, w_bar, stack(&[q_prev, q, u]), r_bar, c, d)
}

fn invert(e: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let lu = e.clone().lu();
    let inv = lu.try_inverse()?;
    let scale = e.amax().max(f64::MIN_POSITIVE);
    // Reject numerically singular blocks whose inverse explodes.
    if inv.iter().all(|v| v.is_finite()) && inv.amax() * scale < 1e14 {
        Some(inv)
    } else {
        None
    }
}

/// Linearizes every stage of a reference in parallel. Stage `k` maps
/// `(q̄_k, q̄_{k+1}, ū_k)` to `q̄_{k+2}`.
pub fn linearize_reference(
    model: &ModelSpec,
    terrain: &TerrainProfile,
    reference: &ReferenceTrajectory,
) -> Result<Vec<StageLinearization>> {
    reference.validate(model)?;
    (0..reference.stages())
        .into_par_iter()
        .map(|k| {
            let q = |j: usize| DVector::from_column_slice(&reference.configurations[j]);
            linearize_stage(
                model,
                terrain,
                k,
                &q(k),
                &q(k + 1),
                &DVector::from_column_slice(&reference.controls[k]),
                &q(k + 2),
                &reference.contacts[k],
            )
        })
        .collect()
}
