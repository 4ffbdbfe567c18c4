//! Rigid-body systems with point contacts.
//!
//! Every shipped system is a planar mechanism whose mass points and contact
//! points are [`PointChain`]s, so the mass matrix, bias, Jacobians and all
//! of their configuration derivatives are analytic.

mod kinematics;
mod params;
mod systems;
mod terrain;

pub use kinematics::{PointChain, Segment};
pub use params::{ModelParams, BUILTIN_MODELS};
pub use terrain::TerrainProfile;

use nalgebra::{Cholesky, DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment dimension. Every shipped system is planar.
pub const ENV_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassPoint {
    pub name: String,
    pub mass: f64,
    pub chain: PointChain,
}

/// Kinetic energy `½ I (aᵀv)²` for a fixed linear combination `a` of
/// coordinate rates: link rotational inertia, or lumped coordinate inertia.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateInertia {
    pub inertia: f64,
    pub rate: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Actuator {
    /// Generalized force on a single coordinate (joint torque, body moment).
    Coordinate { index: usize },
    /// Telescoping leg: pushes the leg-length coordinate out and the base
    /// away from the foot along the leg axis.
    AxialLeg {
        x: usize,
        z: usize,
        angle: usize,
        length: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surface {
    /// Terrain below the point; world-vertical normal.
    Ground,
    /// Vertical wall at `x = position`; normal points toward +x for a left
    /// wall and −x for a right wall.
    LeftWall { position: f64 },
    RightWall { position: f64 },
}

impl Surface {
    pub fn normal(&self) -> Vector2<f64> {
        match self {
            Surface::Ground => Vector2::new(0.0, 1.0),
            Surface::LeftWall { .. } => Vector2::new(1.0, 0.0),
            Surface::RightWall { .. } => Vector2::new(-1.0, 0.0),
        }
    }

    pub fn tangent(&self) -> Vector2<f64> {
        match self {
            Surface::Ground => Vector2::new(1.0, 0.0),
            _ => Vector2::new(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    pub name: String,
    pub chain: PointChain,
    pub surface: Surface,
    pub friction: f64,
}

/// A planar rigid-body system with contacts.
///
/// Controls and contact forces are generalized impulses over one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub nq: usize,
    pub nu: usize,
    pub timestep: f64,
    pub gravity: f64,
    pub masses: Vec<MassPoint>,
    pub inertias: Vec<CoordinateInertia>,
    pub actuators: Vec<Actuator>,
    pub contacts: Vec<ContactPoint>,
    /// Horizontal and vertical base translation coordinates, if the system floats.
    pub base: Option<[usize; 2]>,
    pub params: ModelParams,
}

impl ModelSpec {
    pub fn from_params(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let model = systems::build(params);
        model.validate()?;
        Ok(model)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        Self::from_params(&ModelParams::builtin(name)?)
    }

    pub fn num_contacts(&self) -> usize {
        self.contacts.len()
    }

    pub fn friction(&self) -> Vec<f64> {
        self.contacts.iter().map(|c| c.friction).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().map(|m| m.mass).sum()
    }

    /// Copy of the model with `mass` kilograms added at the first mass point
    /// (the torso or body of every shipped system).
    pub fn with_payload(&self, mass: f64) -> Self {
        let mut out = self.clone();
        if mass != 0.0 {
            out.masses[0].mass += mass;
            out.name = format!("{}+payload{:.3}", self.name, mass);
        }
        out
    }

    /// Copy of the model with a different time step.
    pub fn with_timestep(&self, timestep: f64) -> Self {
        let mut out = self.clone();
        out.timestep = timestep;
        out
    }

    fn validate(&self) -> Result<()> {
        if self.actuators.len() != self.nu {
            return Err(Error::validation("model", "actuator count differs from nu"));
        }
        if !(self.timestep > 0.0) {
            return Err(Error::validation("model", "time step must be positive"));
        }
        if self.contacts.iter().any(|c| !(c.friction >= 0.0)) {
            return Err(Error::validation("model", "friction coefficients must be nonnegative"));
        }
        let q = DVector::zeros(self.nq);
        if Cholesky::new(self.mass_matrix(&q)).is_none() {
            return Err(Error::validation("model", "mass matrix is not positive definite"));
        }
        Ok(())
    }

    pub fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let n = self.nq;
        let mut m = DMatrix::zeros(n, n);
        for p in &self.masses {
            let j = p.chain.jacobian(q);
            m += p.mass * j.transpose() * j;
        }
        for c in &self.inertias {
            for &(i, ai) in &c.rate {
                for &(k, ak) in &c.rate {
                    m[(i, k)] += c.inertia * ai * ak;
                }
            }
        }
        m
    }

    /// ∂(M(q) a)/∂q for a fixed vector `a`.
    pub fn mass_product_jacobian(&self, q: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64> {
        let n = self.nq;
        let mut out = DMatrix::zeros(n, n);
        for p in &self.masses {
            let j = p.chain.jacobian(q);
            let ja = &j * a;
            let mut h = DMatrix::zeros(n, n);
            p.chain.add_hessian_contraction(q, Vector2::new(ja[0], ja[1]), &mut h);
            out += p.mass * (h + j.transpose() * p.chain.jacobian_dot(q, a));
        }
        out
    }

    /// Dynamics bias C(q, v): velocity-product and gravity terms.
    pub fn bias(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut c = DVector::zeros(self.nq);
        for p in &self.masses {
            let j = p.chain.jacobian(q);
            let acc = p.chain.acceleration_bias(q, v) + Vector2::new(0.0, self.gravity);
            c += p.mass * j.transpose() * acc;
        }
        c
    }

    pub fn bias_velocity_jacobian(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nq, self.nq);
        for p in &self.masses {
            let j = p.chain.jacobian(q);
            out += 2.0 * p.mass * j.transpose() * p.chain.jacobian_dot(q, v);
        }
        out
    }

    pub fn bias_configuration_jacobian(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let n = self.nq;
        let mut out = DMatrix::zeros(n, n);
        for p in &self.masses {
            let j = p.chain.jacobian(q);
            let acc = p.chain.acceleration_bias(q, v) + Vector2::new(0.0, self.gravity);
            let mut h = DMatrix::zeros(n, n);
            p.chain.add_hessian_contraction(q, acc, &mut h);
            out += p.mass * (h + j.transpose() * p.chain.acceleration_bias_jacobian(q, v));
        }
        out
    }

    /// Input Jacobian B(q), n × m.
    pub fn input_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.nq, self.nu);
        for (k, a) in self.actuators.iter().enumerate() {
            match *a {
                Actuator::Coordinate { index } => b[(index, k)] = 1.0,
                Actuator::AxialLeg { x, z, angle, length } => {
                    let (s, c) = q[angle].sin_cos();
                    b[(x, k)] = -s;
                    b[(z, k)] = c;
                    b[(length, k)] = 1.0;
                }
            }
        }
        b
    }

    /// ∂(B(q) u)/∂q.
    pub fn input_product_jacobian(&self, q: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nq, self.nq);
        for (k, a) in self.actuators.iter().enumerate() {
            if let Actuator::AxialLeg { x, z, angle, .. } = *a {
                let (s, c) = q[angle].sin_cos();
                out[(x, angle)] += -c * u[k];
                out[(z, angle)] += -s * u[k];
            }
        }
        out
    }

    pub fn contact_position(&self, q: &DVector<f64>, i: usize) -> Vector2<f64> {
        self.contacts[i].chain.position(q)
    }

    /// Contact Jacobian J(q), (c·d) × n, rows ordered (normal, tangent) per contact.
    pub fn contact_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let c = self.num_contacts();
        let mut out = DMatrix::zeros(c * ENV_DIM, self.nq);
        for (i, cp) in self.contacts.iter().enumerate() {
            let jp = cp.chain.jacobian(q);
            out.row_mut(ENV_DIM * i)
                .copy_from(&(cp.surface.normal().transpose() * &jp));
            out.row_mut(ENV_DIM * i + 1)
                .copy_from(&(cp.surface.tangent().transpose() * &jp));
        }
        out
    }

    /// Tangential rows P⁽ⁱ⁾(q) of the contact Jacobian, c × n.
    pub fn tangent_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let c = self.num_contacts();
        let mut out = DMatrix::zeros(c, self.nq);
        for (i, cp) in self.contacts.iter().enumerate() {
            let jp = cp.chain.jacobian(q);
            out.row_mut(i).copy_from(&(cp.surface.tangent().transpose() * &jp));
        }
        out
    }

    /// ∂(P⁽ⁱ⁾(q) a)/∂q for every contact, stacked c × n.
    pub fn tangent_product_jacobian(&self, q: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64> {
        let c = self.num_contacts();
        let mut out = DMatrix::zeros(c, self.nq);
        for (i, cp) in self.contacts.iter().enumerate() {
            let jd = cp.chain.jacobian_dot(q, a);
            out.row_mut(i).copy_from(&(cp.surface.tangent().transpose() * jd));
        }
        out
    }

    /// World-frame contact force of contact `i` for normal impulse `gamma` and
    /// doubled friction impulses `(beta_pos, beta_neg)`.
    pub fn contact_force(&self, i: usize, gamma: f64, beta_pos: f64, beta_neg: f64) -> Vector2<f64> {
        let s = &self.contacts[i].surface;
        s.normal() * gamma + s.tangent() * (beta_pos - beta_neg)
    }

    /// ∂(J(q)ᵀλ)/∂q for world-frame contact forces, one per contact.
    pub fn contact_force_jacobian(&self, q: &DVector<f64>, forces: &[Vector2<f64>]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nq, self.nq);
        for (cp, f) in self.contacts.iter().zip(forces) {
            cp.chain.add_hessian_contraction(q, *f, &mut out);
        }
        out
    }

    /// Generalized impulse Σ J⁽ⁱ⁾(q)ᵀ f⁽ⁱ⁾.
    pub fn contact_generalized_force(&self, q: &DVector<f64>, forces: &[Vector2<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.nq);
        for (cp, f) in self.contacts.iter().zip(forces) {
            out += cp.chain.jacobian(q).transpose() * f;
        }
        out
    }

    /// Signed distance between each contact point and its surface.
    pub fn signed_distance(&self, q: &DVector<f64>, terrain: &TerrainProfile) -> DVector<f64> {
        DVector::from_iterator(
            self.num_contacts(),
            self.contacts.iter().map(|cp| {
                let p = cp.chain.position(q);
                match cp.surface {
                    Surface::Ground => p.y - terrain.height(p.x),
                    Surface::LeftWall { position } => p.x - position,
                    Surface::RightWall { position } => position - p.x,
                }
            }),
        )
    }

    /// ∂φ/∂q, c × n.
    pub fn signed_distance_jacobian(&self, q: &DVector<f64>, terrain: &TerrainProfile) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.num_contacts(), self.nq);
        for (i, cp) in self.contacts.iter().enumerate() {
            let jp = cp.chain.jacobian(q);
            let row = match cp.surface {
                Surface::Ground => {
                    let slope = terrain.slope(cp.chain.position(q).x);
                    jp.row(1) - slope * jp.row(0)
                }
                Surface::LeftWall { .. } => jp.row(0).into_owned(),
                Surface::RightWall { .. } => -jp.row(0),
            };
            out.row_mut(i).copy_from(&row);
        }
        out
    }

    pub fn kinetic_energy(&self, q: &DVector<f64>, v: &DVector<f64>) -> f64 {
        0.5 * v.dot(&(self.mass_matrix(q) * v))
    }

    pub fn potential_energy(&self, q: &DVector<f64>) -> f64 {
        self.masses
            .iter()
            .map(|p| p.mass * self.gravity * p.chain.position(q).y)
            .sum()
    }

    /// Height of the first mass point (torso or body).
    pub fn body_height(&self, q: &DVector<f64>) -> f64 {
        self.masses[0].chain.position(q).y
    }

    /// Translates a configuration by `(dx, dz)` along the base coordinates.
    pub fn translate(&self, q: &DVector<f64>, dx: f64, dz: f64) -> DVector<f64> {
        let mut out = q.clone();
        if let Some([ix, iz]) = self.base {
            out[ix] += dx;
            out[iz] += dz;
        }
        out
    }

    /// Configuration offset vector for a base translation.
    pub fn translation(&self, dx: f64, dz: f64) -> DVector<f64> {
        self.translate(&DVector::zeros(self.nq), dx, dz)
    }
}
