use nalgebra::{dvector, DMatrix, DVector};

use crate::contact::{solve_step, step, step_jacobians, ContactVariables, StepProgram, StepSettings, Trajectory};
use crate::lcp::PathFollowingSettings;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, TerrainProfile};
use crate::mpc::{ReferenceTrajectory, PERIODIC_TOLERANCE};

/// What a scripted controller sees at step `k`.
pub struct ControllerInput<'a> {
    pub k: usize,
    pub q: &'a DVector<f64>,
    /// `(q_k − q_{k−1}) / h`.
    pub v: DVector<f64>,
    /// Contact variables of the step that produced `q`.
    pub contact: Option<&'a ContactVariables>,
}

/// Rolls out the nonlinear dynamics under a feedback law.
pub fn rollout<F>(
    model: &ModelSpec,
    terrain: &TerrainProfile,
    q0: &DVector<f64>,
    q1: &DVector<f64>,
    steps: usize,
    settings: &StepSettings,
    mut controller: F,
) -> Result<Trajectory>
where
    F: FnMut(&ControllerInput) -> DVector<f64>,
{
    let mut traj = Trajectory {
        timestep: model.timestep,
        configurations: vec![q0.clone(), q1.clone()],
        controls: Vec::with_capacity(steps),
        contacts: Vec::with_capacity(steps),
        iterations: Vec::with_capacity(steps),
    };
    for k in 0..steps {
        let len = traj.configurations.len();
        let (q_prev, q) = (&traj.configurations[len - 2], &traj.configurations[len - 1]);
        let u = controller(&ControllerInput {
            k,
            q,
            v: (q - q_prev) / model.timestep,
            contact: traj.contacts.last(),
        });
        let program = StepProgram::new(model, terrain, q_prev, q, &u)?;
        let result = solve_step(&program, traj.contacts.last(), settings)
            .map_err(|e| Error::GenerationFailed(format!("scripted rollout failed at step {k}: {e}")))?;
        traj.configurations.push(result.q_next);
        traj.controls.push(u);
        traj.contacts.push(result.contact);
        traj.iterations.push(result.iterations);
    }
    Ok(traj)
}

/// Cuts stages `start .. start + len` out of a rollout.
pub fn extract(
    model: &ModelSpec,
    kind: &str,
    traj: &Trajectory,
    start: usize,
    len: usize,
    periodic: bool,
) -> ReferenceTrajectory {
    let base = model.base;
    let translation = match (periodic, base) {
        (true, Some([ix, iz])) => {
            let a = &traj.configurations[start];
            let b = &traj.configurations[start + len];
            [b[ix] - a[ix], b[iz] - a[iz]]
        }
        _ => [0.0, 0.0],
    };
    // Start the reference at horizontal position zero.
    let x0 = base.map_or(0.0, |[ix, _]| traj.configurations[start][ix]);
    ReferenceTrajectory {
        model: model.name.clone(),
        kind: kind.into(),
        timestep: model.timestep,
        configurations: traj.configurations[start..start + len + 2]
            .iter()
            .map(|q| model.translate(q, -x0, 0.0).as_slice().to_vec())
            .collect(),
        controls: traj.controls[start..start + len].iter().map(|u| u.as_slice().to_vec()).collect(),
        contacts: traj.contacts[start..start + len].to_vec(),
        periodic,
        translation,
    }
}

/// Gains of the scripted hopper controller.
#[derive(Debug, Clone, Copy)]
pub struct HopperGait {
    /// Nominal leg length.
    pub leg: f64,
    pub stance_stiffness: f64,
    pub stance_damping: f64,
    /// Extra leg force while the leg extends in stance.
    pub thrust: f64,
    pub flight_stiffness: f64,
    pub flight_damping: f64,
    pub attitude_stiffness: f64,
    pub attitude_damping: f64,
    /// Desired forward speed.
    pub speed: f64,
    /// Foot-placement gain on the speed error.
    pub placement_gain: f64,
    /// Expected stance duration used for the neutral foot placement.
    pub stance_time: f64,
}

impl HopperGait {
    pub fn in_place() -> Self {
        HopperGait {
            leg: 0.5,
            stance_stiffness: 1500.0,
            stance_damping: 20.0,
            thrust: 60.0,
            flight_stiffness: 400.0,
            flight_damping: 30.0,
            attitude_stiffness: 60.0,
            attitude_damping: 8.0,
            speed: 0.0,
            placement_gain: 0.05,
            stance_time: 0.16,
        }
    }

    pub fn forward(speed: f64) -> Self {
        HopperGait {
            speed,
            ..HopperGait::in_place()
        }
    }

    /// Control impulse for the hopper state.
    pub fn control(&self, model: &ModelSpec, input: &ControllerInput) -> DVector<f64> {
        let h = model.timestep;
        let (q, v) = (input.q, &input.v);
        let m = model.total_mass();
        let stance = input.contact.is_some_and(|c| c.gamma[0] > 0.1 * m * model.gravity * h);
        let (theta, r) = (q[2], q[3]);
        let (omega, rdot) = (v[2], v[3]);
        if stance {
            let mut force = self.stance_stiffness * (self.leg - r) - self.stance_damping * rdot;
            if rdot > 0.0 {
                force += self.thrust;
            }
            dvector![0.0, force.max(0.0) * h]
        } else {
            let xdot = v[0];
            let placement = xdot * self.stance_time / 2.0 + self.placement_gain * (xdot - self.speed);
            let target = (placement / self.leg).clamp(-0.5, 0.5).asin();
            let torque = self.attitude_stiffness * (target - theta) - self.attitude_damping * omega;
            let force = self.flight_stiffness * (self.leg - r) - self.flight_damping * rdot;
            dvector![torque * h, force * h]
        }
    }
}

/// Closure gap of a candidate cycle `start .. start + len` after removing
/// the base translation.
fn closure_gap(model: &ModelSpec, traj: &Trajectory, start: usize, len: usize) -> f64 {
    let c = &traj.configurations;
    let shift = match model.base {
        Some([ix, iz]) => model.translation(c[start + len][ix] - c[start][ix], c[start + len][iz] - c[start][iz]),
        None => DVector::zeros(model.nq),
    };
    (0..2)
        .map(|j| (&c[start + len + j] - &c[start + j] - &shift).amax())
        .fold(0.0, f64::max)
}

/// Picks the best-closing cycle between consecutive events among the last
/// `candidates` events.
fn best_cycle(model: &ModelSpec, traj: &Trajectory, events: &[usize], candidates: usize) -> Result<(usize, usize, f64)> {
    if events.len() < 2 {
        return Err(Error::GenerationFailed("scripted gait produced fewer than two cycle events".into()));
    }
    let from = events.len().saturating_sub(candidates + 1);
    events[from..]
        .windows(2)
        .filter(|w| w[1] + 2 <= traj.configurations.len())
        .map(|w| (w[0], w[1] - w[0], closure_gap(model, traj, w[0], w[1] - w[0])))
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .ok_or_else(|| Error::GenerationFailed("no complete cycle".into()))
}

/// Indices `k` where the base height peaks.
fn apex_events(traj: &Trajectory, iz: usize) -> Vec<usize> {
    let c = &traj.configurations;
    (2..c.len() - 1).filter(|&k| c[k][iz] >= c[k - 1][iz] && c[k][iz] > c[k + 1][iz]).collect()
}

fn hopper_reference(model: &ModelSpec, kind: &str, gait: HopperGait, settings: &StepSettings) -> Result<ReferenceTrajectory> {
    let q0 = dvector![0.0, 0.7, 0.0, gait.leg];
    let traj = rollout(model, &TerrainProfile::Flat, &q0, &q0, 1000, settings, |input| gait.control(model, input))?;
    let (start, len, _) = best_cycle(model, &traj, &apex_events(&traj, 1), 6)?;
    let mut reference = extract(model, kind, &traj, start, len, true);
    if gait.speed == 0.0 {
        reference.translation = [0.0, 0.0];
    }
    Ok(reference)
}

/// Every `(model, kind)` pair with a generator.
pub const REFERENCE_KINDS: &[(&str, &str)] = &[
    ("hopper", "hop-in-place"),
    ("hopper", "hop-forward"),
    ("pushbot", "pushbot-upright"),
    ("quadruped", "stand"),
    ("quadruped", "trot"),
    ("biped", "stand"),
    ("biped", "walk"),
];

/// File name of a shipped reference.
pub fn reference_file_name(model: &str, kind: &str) -> String {
    format!("{model}-{kind}.json")
}

/// Generates a dynamically consistent reference by simulating a scripted
/// controller with the nonlinear dynamics.
pub fn generate_reference(model: &ModelSpec, kind: &str) -> Result<ReferenceTrajectory> {
    let settings = StepSettings::default();
    let reference = match (model.name.as_str(), kind) {
        ("hopper", "hop-in-place") => hopper_reference(model, kind, HopperGait::in_place(), &settings)?,
        ("hopper", "hop-forward") => hopper_reference(model, kind, HopperGait::forward(0.5), &settings)?,
        ("pushbot", "pushbot-upright") => {
            let q = DVector::zeros(model.nq);
            let u = DVector::zeros(model.nu);
            let traj = rollout(model, &TerrainProfile::Flat, &q, &q, 25, &settings, |_| u.clone())?;
            extract(model, kind, &traj, 0, 25, true)
        }
        ("quadruped", "stand") => quadruped_stand(model, kind, &settings)?,
        ("quadruped", "trot") => quadruped_reference(model, kind, QuadrupedGait::trot(), &settings)?,
        ("biped", "stand") => biped_reference(model, kind, BipedGait::stand(), &settings)?,
        ("biped", "walk") => biped_reference(model, kind, BipedGait::walk(), &settings)?,
        (name, kind) => {
            return Err(Error::GenerationFailed(format!("no generator for '{kind}' on model '{name}'")));
        }
    };
    reference.validate(model)?;
    Ok(reference)
}

/// Settles a scripted periodic gait for 20 cycles from `q0` and keeps the
/// last full cycle.
fn settled_reference<F>(
    model: &ModelSpec,
    kind: &str,
    q0: &DVector<f64>,
    period: usize,
    settings: &StepSettings,
    controller: F,
) -> Result<ReferenceTrajectory>
where
    F: FnMut(&ControllerInput) -> DVector<f64>,
{
    let steps = 20 * period;
    let traj = rollout(model, &TerrainProfile::Flat, q0, q0, steps, settings, controller)?;
    let start = steps - 2 * period;
    let gap = closure_gap(model, &traj, start, period);
    if gap > PERIODIC_TOLERANCE {
        return Err(Error::GenerationFailed(format!("{} {kind} did not settle (closure gap {gap:.3e})", model.name)));
    }
    Ok(extract(model, kind, &traj, start, period, true))
}

/// Constant stand at a static equilibrium of the stand controller, found by
/// Newton's method on `q ↦ step(q, q, u(q)) − q` from the settled rollout.
fn quadruped_stand(model: &ModelSpec, kind: &str, settings: &StepSettings) -> Result<ReferenceTrajectory> {
    let gait = QuadrupedGait::stand();
    let settled = quadruped_reference(model, kind, gait, settings)?;
    let control = |q: &DVector<f64>| {
        gait.control(model, &ControllerInput {
            k: 0,
            q,
            v: DVector::zeros(model.nq),
            contact: None,
        })
    };
    let tight = StepSettings {
        solver: PathFollowingSettings {
            residual_tol: 1e-12,
            ..settings.solver
        },
        ..*settings
    };
    let flat = TerrainProfile::Flat;
    let mut q = DVector::from_column_slice(&settled.configurations[0]);
    for _ in 0..20 {
        let u = control(&q);
        let result = step(model, &flat, &q, &q, &u, &tight)?;
        let defect = &result.q_next - &q;
        if defect.amax() < 1e-13 {
            let w = ReferenceTrajectory {
                configurations: vec![q.as_slice().to_vec(); settled.stages() + 2],
                controls: vec![u.as_slice().to_vec(); settled.stages()],
                contacts: vec![result.contact; settled.stages()],
                translation: [0.0, 0.0],
                ..settled
            };
            return Ok(w);
        }
        let jac = step_jacobians(model, &flat, &q, &q, &u, &result, settings.solver.rho_target)?;
        let eps = 1e-7;
        let mut du = DMatrix::zeros(model.nu, model.nq);
        for j in 0..model.nq {
            let mut e = DVector::zeros(model.nq);
            e[j] = eps;
            du.set_column(j, &((control(&(&q + &e)) - control(&(&q - &e))) / (2.0 * eps)));
        }
        let a = jac.wrt_q_prev + jac.wrt_q + jac.wrt_u * du - DMatrix::identity(model.nq, model.nq);
        let dq = a
            .svd(true, true)
            .solve(&(-defect), 1e-9)
            .map_err(|e| Error::GenerationFailed(format!("stand equilibrium: {e}")))?;
        q += dq;
    }
    Err(Error::GenerationFailed("stand equilibrium did not converge".into()))
}

fn quadruped_reference(model: &ModelSpec, kind: &str, gait: QuadrupedGait, settings: &StepSettings) -> Result<ReferenceTrajectory> {
    let mut q0 = gait.initial(model);
    q0[1] += 1e-3;
    settled_reference(model, kind, &q0, gait.period, settings, |input| gait.control(model, input))
}

fn biped_reference(model: &ModelSpec, kind: &str, gait: BipedGait, settings: &StepSettings) -> Result<ReferenceTrajectory> {
    let mut q0 = gait.initial(model);
    q0[1] += 1e-3;
    settled_reference(model, kind, &q0, gait.period, settings, |input| gait.control(model, input))
}

/// Two-link inverse kinematics for a foot at `(px, pz)` relative to the hip.
/// Returns `(thigh, knee)` angles with the knee bent backward (`knee < 0`).
pub fn leg_ik(l1: f64, l2: f64, px: f64, pz: f64) -> (f64, f64) {
    let d2 = px * px + pz * pz;
    let cos_k = ((d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let knee = -cos_k.acos();
    let thigh = px.atan2(-pz) - (l2 * knee.sin()).atan2(l1 + l2 * knee.cos());
    (thigh, knee)
}

/// Scripted periodic trot of the planar quadruped: diagonal leg pairs
/// alternate between swing and stance; joints track inverse-kinematics
/// targets with PD control.
#[derive(Debug, Clone, Copy)]
pub struct QuadrupedGait {
    /// Hip height above the ground.
    pub height: f64,
    /// Stride length per half cycle; zero trots in place.
    pub stride: f64,
    pub clearance: f64,
    /// Steps per full cycle.
    pub period: usize,
    pub stiffness: f64,
    pub damping: f64,
}

impl QuadrupedGait {
    pub fn stand() -> Self {
        QuadrupedGait {
            height: 0.3,
            stride: 0.0,
            clearance: 0.0,
            period: 32,
            stiffness: 200.0,
            damping: 8.0,
        }
    }

    pub fn trot() -> Self {
        QuadrupedGait {
            stride: 0.06,
            clearance: 0.05,
            ..QuadrupedGait::stand()
        }
    }

    fn lengths(model: &ModelSpec) -> (f64, f64) {
        match model.params {
            crate::model::ModelParams::Quadruped {
                thigh_length,
                calf_length,
                ..
            } => (thigh_length, calf_length),
            _ => (0.2, 0.2),
        }
    }

    /// Foot target relative to the hip for a leg at gait phase `s ∈ [0, 1)`:
    /// swing during the first half, stance during the second.
    fn foot(&self, s: f64) -> (f64, f64) {
        let half = self.stride / 2.0;
        if s < 0.5 {
            let p = s / 0.5;
            (-half + self.stride * p, -self.height + self.clearance * (std::f64::consts::PI * p).sin())
        } else {
            let p = (s - 0.5) / 0.5;
            (half - self.stride * p, -self.height)
        }
    }

    /// Joint targets at step `k`.
    pub fn targets(&self, model: &ModelSpec, k: usize) -> Vec<f64> {
        let (l1, l2) = Self::lengths(model);
        let phase = (k % self.period) as f64 / self.period as f64;
        let mut out = Vec::with_capacity(8);
        for leg in 0..4 {
            // Front-left pairs with back-right, front-right with back-left.
            let offset = if leg == 0 || leg == 3 { 0.0 } else { 0.5 };
            let (px, pz) = if self.clearance == 0.0 { (0.0, -self.height) } else { self.foot((phase + offset) % 1.0) };
            let (thigh, knee) = leg_ik(l1, l2, px, pz);
            out.push(thigh);
            out.push(knee);
        }
        out
    }

    /// Standing configuration with the feet on flat ground.
    pub fn initial(&self, model: &ModelSpec) -> DVector<f64> {
        let mut q = DVector::zeros(model.nq);
        q[1] = self.height;
        for (j, v) in self.targets(model, 0).iter().enumerate() {
            q[3 + j] = *v;
        }
        q
    }

    /// Whether leg `leg` is in its stance phase at step `k`.
    pub fn in_stance(&self, leg: usize, k: usize) -> bool {
        if self.clearance == 0.0 {
            return true;
        }
        let offset = if leg == 0 || leg == 3 { 0.0 } else { 0.5 };
        let phase = (k % self.period) as f64 / self.period as f64;
        (phase + offset) % 1.0 >= 0.5
    }

    /// Joint impulses: weight support shared by the stance legs plus a PD
    /// term made implicit in each joint's apparent inertia.
    pub fn control(&self, model: &ModelSpec, input: &ControllerInput) -> DVector<f64> {
        let h = model.timestep;
        let targets = self.targets(model, input.k);
        let stance: Vec<usize> = (0..4).filter(|&l| self.in_stance(l, input.k)).collect();
        let mut load = model.bias(input.q, &DVector::zeros(model.nq));
        if !stance.is_empty() {
            let share = model.total_mass() * model.gravity / stance.len() as f64;
            let jac = model.contact_jacobian(input.q);
            for &leg in &stance {
                for i in 0..model.nq {
                    load[i] -= jac[(2 * leg, i)] * share;
                }
            }
        }
        let mobility = model
            .mass_matrix(input.q)
            .try_inverse()
            .unwrap_or_else(|| DMatrix::identity(model.nq, model.nq));
        DVector::from_iterator(
            8,
            (0..8).map(|j| {
                let i = 3 + j;
                let damping = self.damping + h * self.stiffness;
                // Hip targets are absolute leg angles, which also levels the torso.
                let (pitch, rate) = if j % 2 == 0 { (input.q[2], input.v[2]) } else { (0.0, 0.0) };
                let pd = (self.stiffness * (targets[j] - input.q[i] - pitch) - damping * (input.v[i] + rate))
                    / (1.0 + h * damping * mobility[(i, i)]);
                h * (load[i] + pd)
            }),
        )
    }

}

/// Scripted planar walk: the legs alternate single-support phases, feet are
/// held flat, and the torso is levelled by the body-moment actuator.
#[derive(Debug, Clone, Copy)]
pub struct BipedGait {
    /// Hip height above the ground.
    pub height: f64,
    /// Foot travel relative to the hip per single-support phase.
    pub stride: f64,
    pub clearance: f64,
    /// Steps per full cycle (two single-support phases).
    pub period: usize,
    pub stiffness: f64,
    pub damping: f64,
    pub torso_stiffness: f64,
    pub torso_damping: f64,
}

impl BipedGait {
    pub fn stand() -> Self {
        BipedGait {
            height: 0.72,
            stride: 0.0,
            clearance: 0.0,
            period: 48,
            stiffness: 300.0,
            damping: 10.0,
            torso_stiffness: 200.0,
            torso_damping: 20.0,
        }
    }

    pub fn walk() -> Self {
        BipedGait {
            stride: 0.1,
            clearance: 0.08,
            ..BipedGait::stand()
        }
    }

    fn lengths(model: &ModelSpec) -> (f64, f64) {
        match model.params {
            crate::model::ModelParams::Biped {
                thigh_length,
                calf_length,
                ..
            } => (thigh_length, calf_length),
            _ => (0.4, 0.4),
        }
    }

    fn phase(&self, leg: usize, k: usize) -> f64 {
        let phase = (k % self.period) as f64 / self.period as f64;
        (phase + 0.5 * leg as f64) % 1.0
    }

    pub fn in_stance(&self, leg: usize, k: usize) -> bool {
        self.clearance == 0.0 || self.phase(leg, k) >= 0.5
    }

    /// Foot target relative to the hip: swing during the first half of the
    /// leg's phase, stance during the second.
    fn foot(&self, s: f64) -> (f64, f64) {
        let half = self.stride / 2.0;
        if self.clearance == 0.0 {
            (0.0, -self.height)
        } else if s < 0.5 {
            let p = s / 0.5;
            let blend = 0.5 - 0.5 * (std::f64::consts::PI * p).cos();
            (-half + self.stride * blend, -self.height + self.clearance * (std::f64::consts::PI * p).sin())
        } else {
            let p = (s - 0.5) / 0.5;
            (half - self.stride * p, -self.height)
        }
    }

    /// Absolute thigh angle and relative knee angle per leg at step `k`.
    pub fn targets(&self, model: &ModelSpec, k: usize) -> [(f64, f64); 2] {
        let (l1, l2) = Self::lengths(model);
        [0, 1].map(|leg| {
            let (px, pz) = self.foot(self.phase(leg, k));
            leg_ik(l1, l2, px, pz)
        })
    }

    /// Upright configuration with both feet flat on flat ground.
    pub fn initial(&self, model: &ModelSpec) -> DVector<f64> {
        let mut q = DVector::zeros(model.nq);
        q[1] = self.height;
        for (leg, (thigh, knee)) in self.targets(model, 0).into_iter().enumerate() {
            q[3 + 3 * leg] = thigh;
            q[4 + 3 * leg] = knee;
            q[5 + 3 * leg] = -(thigh + knee);
        }
        q
    }

    /// Joint and body-moment impulses: weight support shared by the stance
    /// contacts plus PD terms made implicit in each coordinate's apparent
    /// inertia.
    pub fn control(&self, model: &ModelSpec, input: &ControllerInput) -> DVector<f64> {
        let h = model.timestep;
        let (q, v) = (input.q, &input.v);
        let targets = self.targets(model, input.k);
        let stance: Vec<usize> = (0..2).filter(|&l| self.in_stance(l, input.k)).collect();
        let mut load = model.bias(q, &DVector::zeros(model.nq));
        let share = model.total_mass() * model.gravity / (2 * stance.len()).max(1) as f64;
        let jac = model.contact_jacobian(q);
        for &leg in &stance {
            for contact in [2 * leg, 2 * leg + 1] {
                for i in 0..model.nq {
                    load[i] -= jac[(2 * contact, i)] * share;
                }
            }
        }
        let mobility = model
            .mass_matrix(q)
            .try_inverse()
            .unwrap_or_else(|| DMatrix::identity(model.nq, model.nq));
        let implicit = |i: usize, stiffness: f64, damping: f64, error: f64, rate: f64| {
            let damping = damping + h * stiffness;
            h * (load[i] + (stiffness * error - damping * rate) / (1.0 + h * damping * mobility[(i, i)]))
        };
        let mut u = DVector::zeros(model.nu);
        for (leg, (thigh, knee)) in targets.into_iter().enumerate() {
            let (hip, kn, ankle) = (3 + 3 * leg, 4 + 3 * leg, 5 + 3 * leg);
            let leg_angle = q[2] + q[hip];
            let leg_rate = v[2] + v[hip];
            let foot_angle = leg_angle + q[kn] + q[ankle];
            let foot_rate = leg_rate + v[kn] + v[ankle];
            u[3 * leg] = implicit(hip, self.stiffness, self.damping, thigh - leg_angle, leg_rate);
            u[3 * leg + 1] = implicit(kn, self.stiffness, self.damping, knee - q[kn], v[kn]);
            u[3 * leg + 2] = implicit(ankle, self.stiffness, self.damping, -foot_angle, foot_rate);
        }
        u[6] = implicit(2, self.torso_stiffness, self.torso_damping, -q[2], v[2]);
        u
    }
}
