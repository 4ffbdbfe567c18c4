//! Planar point kinematics with analytic first, second and third derivatives.
//!
//! A point is a base translation plus a sum of rotated offsets,
//!
//! ```text
//! p(q) = (q[x], q[z]) + Σ_s R(φ_s(q)) o_s(q),   φ_s = Σ_j a_sj q_j,   o_s = o_s0 + Σ_j q_j b_sj
//! ```
//!
//! which covers revolute chains (constant offsets) and prismatic joints
//! (offsets linear in a coordinate). Every dynamics term of the planar models
//! is assembled from these quantities.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Absolute segment angle as a linear combination of coordinates.
    pub angle: Vec<(usize, f64)>,
    /// Constant offset in the segment frame.
    pub offset: [f64; 2],
    /// Coordinate-proportional offsets in the segment frame (prismatic joints).
    #[serde(default)]
    pub extension: Vec<(usize, [f64; 2])>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointChain {
    /// Indices of the horizontal and vertical base translation coordinates.
    pub base: Option<[usize; 2]>,
    pub segments: Vec<Segment>,
}

fn rot(phi: f64, o: Vector2<f64>) -> Vector2<f64> {
    let (s, c) = phi.sin_cos();
    Vector2::new(c * o.x - s * o.y, s * o.x + c * o.y)
}

// R(φ) S o, with S the quarter-turn.
fn rot_perp(phi: f64, o: Vector2<f64>) -> Vector2<f64> {
    rot(phi, Vector2::new(-o.y, o.x))
}

struct Evaluated {
    phi: f64,
    o: Vector2<f64>,
}

impl Segment {
    fn eval(&self, q: &DVector<f64>) -> Evaluated {
        let phi = self.angle.iter().map(|&(j, a)| a * q[j]).sum();
        let mut o = Vector2::from(self.offset);
        for &(j, b) in &self.extension {
            o += q[j] * Vector2::from(b);
        }
        Evaluated { phi, o }
    }

    fn angle_rate(&self, v: &DVector<f64>) -> f64 {
        self.angle.iter().map(|&(j, a)| a * v[j]).sum()
    }

    fn extension_rate(&self, v: &DVector<f64>) -> Vector2<f64> {
        self.extension
            .iter()
            .fold(Vector2::zeros(), |acc, &(j, b)| acc + v[j] * Vector2::from(b))
    }
}

impl PointChain {
    pub fn fixed(x: f64, z: f64) -> Self {
        PointChain {
            base: None,
            segments: vec![Segment {
                angle: vec![],
                offset: [x, z],
                extension: vec![],
            }],
        }
    }

    pub fn position(&self, q: &DVector<f64>) -> Vector2<f64> {
        let mut p = match self.base {
            Some([ix, iz]) => Vector2::new(q[ix], q[iz]),
            None => Vector2::zeros(),
        };
        for seg in &self.segments {
            let e = seg.eval(q);
            p += rot(e.phi, e.o);
        }
        p
    }

    /// ∂p/∂q, 2 × n.
    pub fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let n = q.len();
        let mut jac = DMatrix::zeros(2, n);
        if let Some([ix, iz]) = self.base {
            jac[(0, ix)] += 1.0;
            jac[(1, iz)] += 1.0;
        }
        for seg in &self.segments {
            let e = seg.eval(q);
            let t = rot_perp(e.phi, e.o);
            for &(j, a) in &seg.angle {
                jac[(0, j)] += a * t.x;
                jac[(1, j)] += a * t.y;
            }
            for &(j, b) in &seg.extension {
                let rb = rot(e.phi, Vector2::from(b));
                jac[(0, j)] += rb.x;
                jac[(1, j)] += rb.y;
            }
        }
        jac
    }

    /// Σ_k ∂J/∂q_k v_k (= ∂(J v)/∂q, the Hessian is symmetric), 2 × n.
    pub fn jacobian_dot(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let n = q.len();
        let mut out = DMatrix::zeros(2, n);
        for seg in &self.segments {
            let e = seg.eval(q);
            let av = seg.angle_rate(v);
            let bv = seg.extension_rate(v);
            let ro = rot(e.phi, e.o);
            let rsbv = rot_perp(e.phi, bv);
            for &(j, a) in &seg.angle {
                let col = -a * av * ro + a * rsbv;
                out[(0, j)] += col.x;
                out[(1, j)] += col.y;
            }
            for &(j, b) in &seg.extension {
                let col = av * rot_perp(e.phi, Vector2::from(b));
                out[(0, j)] += col.x;
                out[(1, j)] += col.y;
            }
        }
        out
    }

    /// vᵀ (∂²p/∂q²) v, the velocity-product part of the point acceleration.
    pub fn acceleration_bias(&self, q: &DVector<f64>, v: &DVector<f64>) -> Vector2<f64> {
        let mut acc = Vector2::zeros();
        for seg in &self.segments {
            let e = seg.eval(q);
            let av = seg.angle_rate(v);
            let bv = seg.extension_rate(v);
            acc += -av * av * rot(e.phi, e.o) + 2.0 * av * rot_perp(e.phi, bv);
        }
        acc
    }

    /// ∂/∂q of [`Self::acceleration_bias`] at fixed v, 2 × n.
    pub fn acceleration_bias_jacobian(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let n = q.len();
        let mut out = DMatrix::zeros(2, n);
        for seg in &self.segments {
            let e = seg.eval(q);
            let av = seg.angle_rate(v);
            let bv = seg.extension_rate(v);
            let rso = rot_perp(e.phi, e.o);
            let rbv = rot(e.phi, bv);
            for &(k, a) in &seg.angle {
                let col = -av * av * a * rso - 2.0 * a * av * rbv;
                out[(0, k)] += col.x;
                out[(1, k)] += col.y;
            }
            for &(k, b) in &seg.extension {
                let col = -av * av * rot(e.phi, Vector2::from(b));
                out[(0, k)] += col.x;
                out[(1, k)] += col.y;
            }
        }
        out
    }

    /// Adds Σ_i f_i ∂²p_i/∂q² (an n × n symmetric matrix) into `out`.
    /// This is ∂(Jᵀf)/∂q for a constant world-frame force f.
    pub fn add_hessian_contraction(&self, q: &DVector<f64>, f: Vector2<f64>, out: &mut DMatrix<f64>) {
        for seg in &self.segments {
            let e = seg.eval(q);
            let alpha = f.dot(&rot(e.phi, e.o));
            for &(j, aj) in &seg.angle {
                for &(k, ak) in &seg.angle {
                    out[(j, k)] -= alpha * aj * ak;
                }
            }
            for &(k, b) in &seg.extension {
                let g = f.dot(&rot_perp(e.phi, Vector2::from(b)));
                for &(j, aj) in &seg.angle {
                    out[(j, k)] += aj * g;
                    out[(k, j)] += aj * g;
                }
            }
        }
    }
}
