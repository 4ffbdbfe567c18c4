use nalgebra::{DMatrix, DVector, Vector2};

use super::ContactLayout;
use crate::error::{Error, Result};
use crate::lcp::{DenseLu, Partition, ResidualProgram};
use crate::model::{ModelSpec, TerrainProfile};

/// Nonlinear time-step residual for given `(q_prev, q, u)`.
///
/// Rows are, in order: impulse balance (n), gap (c), friction cone (c),
/// maximum dissipation (2c) and the relaxed bilinear rows (4c). The problem
/// data θ is `(q_prev, q, u)`.
pub struct StepProgram<'a> {
    pub model: &'a ModelSpec,
    pub terrain: &'a TerrainProfile,
    pub q_prev: DVector<f64>,
    pub q: DVector<f64>,
    pub u: DVector<f64>,
    /// Additive generalized impulse on the balance rows.
    pub disturbance: Option<DVector<f64>>,
    layout: ContactLayout,
    momentum: DVector<f64>,
    mass: DMatrix<f64>,
}

impl<'a> StepProgram<'a> {
    pub fn new(
        model: &'a ModelSpec,
        terrain: &'a TerrainProfile,
        q_prev: &DVector<f64>,
        q: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<Self> {
        check_len("q_prev", model.nq, q_prev.len())?;
        check_len("q", model.nq, q.len())?;
        check_len("u", model.nu, u.len())?;
        let h = model.timestep;
        Ok(StepProgram {
            model,
            terrain,
            q_prev: q_prev.clone(),
            q: q.clone(),
            u: u.clone(),
            disturbance: None,
            layout: ContactLayout::new(model.nq, model.num_contacts()),
            momentum: model.mass_matrix(q_prev) * (q - q_prev) / h,
            mass: model.mass_matrix(q),
        })
    }

    pub fn with_disturbance(mut self, impulse: Option<DVector<f64>>) -> Result<Self> {
        if let Some(d) = &impulse {
            check_len("disturbance", self.model.nq, d.len())?;
        }
        self.disturbance = impulse;
        Ok(self)
    }

    pub fn layout(&self) -> ContactLayout {
        self.layout
    }

    fn forces(&self, w: &DVector<f64>) -> Vec<Vector2<f64>> {
        let l = &self.layout;
        (0..l.c)
            .map(|i| self.model.contact_force(i, w[l.gamma(i)], w[l.beta(i, 0)], w[l.beta(i, 1)]))
            .collect()
    }

    /// Equality rows only, `r_eq(w; θ)`.
    pub fn equality_residual(&self, w: &DVector<f64>, out: &mut DVector<f64>) {
        let l = &self.layout;
        let m = self.model;
        let h = m.timestep;
        let x = w.rows(0, l.n).into_owned();
        let dq = &x - &self.q;
        let v = &dq / h;

        let mut rx = &self.momentum - &self.mass * &dq / h - m.bias(&self.q, &v) * h;
        rx += m.contact_generalized_force(&x, &self.forces(w));
        rx += m.input_matrix(&x) * &self.u;
        if let Some(d) = &self.disturbance {
            rx += d;
        }
        out.rows_mut(0, l.n).copy_from(&rx);

        let phi = m.signed_distance(&x, self.terrain);
        let nu = m.tangent_jacobian(&x) * &v;
        for i in 0..l.c {
            out[l.gap_row(i)] = w[l.s_phi(i)] - phi[i];
            out[l.cone_row(i)] =
                w[l.s_psi(i)] - (m.contacts[i].friction * w[l.gamma(i)] - w[l.beta(i, 0)] - w[l.beta(i, 1)]);
            out[l.dissipation_row(i, 0)] = w[l.eta(i, 0)] - nu[i] - w[l.psi(i)];
            out[l.dissipation_row(i, 1)] = w[l.eta(i, 1)] + nu[i] - w[l.psi(i)];
        }
    }

    /// `∂r_eq/∂w`, (n + 4c) × (n + 8c).
    pub fn equality_jacobian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let l = &self.layout;
        let m = self.model;
        let h = m.timestep;
        let x = w.rows(0, l.n).into_owned();
        let dq = &x - &self.q;
        let v = &dq / h;
        let mut jac = DMatrix::zeros(l.num_equality(), l.len());

        let e = -&self.mass / h - m.bias_velocity_jacobian(&self.q, &v)
            + m.contact_force_jacobian(&x, &self.forces(w))
            + m.input_product_jacobian(&x, &self.u);
        jac.view_mut((0, 0), (l.n, l.n)).copy_from(&e);
        for (i, cp) in m.contacts.iter().enumerate() {
            let jp = cp.chain.jacobian(&x);
            let jn = jp.transpose() * cp.surface.normal();
            let jt = jp.transpose() * cp.surface.tangent();
            jac.view_mut((0, l.gamma(i)), (l.n, 1)).copy_from(&jn);
            jac.view_mut((0, l.beta(i, 0)), (l.n, 1)).copy_from(&jt);
            jac.view_mut((0, l.beta(i, 1)), (l.n, 1)).copy_from(&(-jt));
        }

        let dphi = m.signed_distance_jacobian(&x, self.terrain);
        let dnu = (m.tangent_jacobian(&x) + m.tangent_product_jacobian(&x, &dq)) / h;
        for i in 0..l.c {
            let g = l.gap_row(i);
            jac.view_mut((g, 0), (1, l.n)).copy_from(&(-dphi.row(i)));
            jac[(g, l.s_phi(i))] = 1.0;

            let k = l.cone_row(i);
            jac[(k, l.gamma(i))] = -m.contacts[i].friction;
            jac[(k, l.beta(i, 0))] = 1.0;
            jac[(k, l.beta(i, 1))] = 1.0;
            jac[(k, l.s_psi(i))] = 1.0;

            for (side, sign) in [(0, -1.0), (1, 1.0)] {
                let r = l.dissipation_row(i, side);
                jac.view_mut((r, 0), (1, l.n)).copy_from(&(dnu.row(i) * sign));
                jac[(r, l.psi(i))] = -1.0;
                jac[(r, l.eta(i, side))] = 1.0;
            }
        }
        jac
    }

    /// `∂r_eq/∂θ` for `θ = (q_prev, q, u)`, (n + 4c) × (2n + m).
    pub fn equality_parameter_jacobian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let l = &self.layout;
        let m = self.model;
        let (n, h) = (l.n, m.timestep);
        let x = w.rows(0, n).into_owned();
        let dq = &x - &self.q;
        let v = &dq / h;
        let mut jac = DMatrix::zeros(l.num_equality(), 2 * n + m.nu);

        let mass_prev = m.mass_matrix(&self.q_prev);
        let d_prev = (m.mass_product_jacobian(&self.q_prev, &(&self.q - &self.q_prev)) - &mass_prev) / h;
        let d_q = (mass_prev - m.mass_product_jacobian(&self.q, &dq) + &self.mass) / h
            - m.bias_configuration_jacobian(&self.q, &v) * h
            + m.bias_velocity_jacobian(&self.q, &v);
        jac.view_mut((0, 0), (n, n)).copy_from(&d_prev);
        jac.view_mut((0, n), (n, n)).copy_from(&d_q);
        jac.view_mut((0, 2 * n), (n, m.nu)).copy_from(&m.input_matrix(&x));

        let p = m.tangent_jacobian(&x) / h;
        for i in 0..l.c {
            jac.view_mut((l.dissipation_row(i, 0), n), (1, n)).copy_from(&p.row(i));
            jac.view_mut((l.dissipation_row(i, 1), n), (1, n)).copy_from(&(-p.row(i)));
        }
        jac
    }
}

impl ResidualProgram for StepProgram<'_> {
    type Factor = DenseLu;

    fn partition(&self) -> Partition {
        self.layout.partition()
    }

    fn num_params(&self) -> usize {
        2 * self.model.nq + self.model.nu
    }

    fn residual(&self, w: &DVector<f64>, rho: f64, out: &mut DVector<f64>) {
        let l = &self.layout;
        self.equality_residual(w, out);
        let k = 4 * l.c;
        for j in 0..k {
            out[l.bilinear_row(j)] = w[l.n + j] * w[l.n + k + j] - rho;
        }
    }

    fn jacobian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let l = &self.layout;
        let mut jac = DMatrix::zeros(l.len(), l.len());
        jac.view_mut((0, 0), (l.num_equality(), l.len()))
            .copy_from(&self.equality_jacobian(w));
        let k = 4 * l.c;
        for j in 0..k {
            jac[(l.bilinear_row(j), l.n + j)] = w[l.n + k + j];
            jac[(l.bilinear_row(j), l.n + k + j)] = w[l.n + j];
        }
        jac
    }

    fn factorize(&self, w: &DVector<f64>) -> Result<DenseLu> {
        DenseLu::new(self.jacobian(w))
    }

    fn parameter_jacobian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let l = &self.layout;
        let mut jac = DMatrix::zeros(l.len(), self.num_params());
        jac.view_mut((0, 0), (l.num_equality(), self.num_params()))
            .copy_from(&self.equality_parameter_jacobian(w));
        jac
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
