use nalgebra::{DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::lcp::Partition;

/// Index map of the contact decision vector
/// `w = (q_next, γ, ψ, β, s_φ, s_ψ, η)` and of the matching residual rows.
///
/// Friction pairs are stored per contact as `(β⁺, β⁻)` and `(η⁺, η⁻)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContactLayout {
    pub n: usize,
    pub c: usize,
}

impl ContactLayout {
    pub fn new(n: usize, c: usize) -> Self {
        ContactLayout { n, c }
    }

    pub fn partition(&self) -> Partition {
        Partition {
            primal: self.n,
            cone: 4 * self.c,
        }
    }

    pub fn len(&self) -> usize {
        self.n + 8 * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gamma(&self, i: usize) -> usize {
        self.n + i
    }

    pub fn psi(&self, i: usize) -> usize {
        self.n + self.c + i
    }

    pub fn beta(&self, i: usize, k: usize) -> usize {
        self.n + 2 * self.c + 2 * i + k
    }

    pub fn s_phi(&self, i: usize) -> usize {
        self.n + 4 * self.c + i
    }

    pub fn s_psi(&self, i: usize) -> usize {
        self.n + 5 * self.c + i
    }

    pub fn eta(&self, i: usize, k: usize) -> usize {
        self.n + 6 * self.c + 2 * i + k
    }

    /// Gap row of contact `i`; it pairs with `s_φ`.
    pub fn gap_row(&self, i: usize) -> usize {
        self.n + i
    }

    /// Friction-cone row of contact `i`; it pairs with `s_ψ`.
    pub fn cone_row(&self, i: usize) -> usize {
        self.n + self.c + i
    }

    /// Dissipation row `k` of contact `i`; it pairs with `η`.
    pub fn dissipation_row(&self, i: usize, k: usize) -> usize {
        self.n + 2 * self.c + 2 * i + k
    }

    pub fn bilinear_row(&self, j: usize) -> usize {
        self.n + 4 * self.c + j
    }

    /// Number of equality rows (everything except the bilinear block).
    pub fn num_equality(&self) -> usize {
        self.n + 4 * self.c
    }

    pub fn configuration<'a>(&self, w: &'a DVector<f64>) -> DVectorView<'a, f64> {
        w.rows(0, self.n)
    }
}

/// Contact impulses, duals and slacks of one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactVariables {
    pub gamma: Vec<f64>,
    /// `(β⁺, β⁻)` per contact.
    pub beta: Vec<f64>,
    pub psi: Vec<f64>,
    pub eta: Vec<f64>,
    pub s_phi: Vec<f64>,
    pub s_psi: Vec<f64>,
}

impl ContactVariables {
    pub fn from_w(layout: &ContactLayout, w: &DVector<f64>) -> Self {
        let c = layout.c;
        let take = |start: usize, len: usize| w.rows(start, len).iter().copied().collect::<Vec<_>>();
        ContactVariables {
            gamma: take(layout.gamma(0), c),
            psi: take(layout.psi(0), c),
            beta: take(layout.beta(0, 0), 2 * c),
            s_phi: take(layout.s_phi(0), c),
            s_psi: take(layout.s_psi(0), c),
            eta: take(layout.eta(0, 0), 2 * c),
        }
    }

    /// Writes the contact block into `w`, leaving `q_next` untouched.
    pub fn write_into(&self, layout: &ContactLayout, w: &mut DVector<f64>) {
        let mut put = |start: usize, v: &[f64]| {
            for (k, x) in v.iter().enumerate() {
                w[start + k] = *x;
            }
        };
        put(layout.gamma(0), &self.gamma);
        put(layout.psi(0), &self.psi);
        put(layout.beta(0, 0), &self.beta);
        put(layout.s_phi(0), &self.s_phi);
        put(layout.s_psi(0), &self.s_psi);
        put(layout.eta(0, 0), &self.eta);
    }

    /// Net tangential impulse `β⁺ − β⁻` of contact `i`.
    pub fn friction(&self, i: usize) -> f64 {
        self.beta[2 * i] - self.beta[2 * i + 1]
    }
}
