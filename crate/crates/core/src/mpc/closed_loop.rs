use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{Policy, SolveRecord};
use crate::contact::{solve_step, ContactVariables, Disturbance, StepProgram, StepSettings};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, TerrainProfile};

/// Closed-loop episode configuration.
#[derive(Debug, Clone)]
pub struct EpisodeSettings {
    /// Number of policy ticks.
    pub ticks: usize,
    /// Simulator steps per policy tick.
    pub substeps: usize,
    pub terrain: TerrainProfile,
    /// Impulses indexed by simulator step.
    pub disturbances: Vec<Disturbance>,
    /// Mass added to the simulated body only.
    pub payload: f64,
    /// The episode fails once the body is this close to the terrain.
    pub fall_height: f64,
    pub simulator: StepSettings,
}

/// Everything recorded during one closed-loop episode. `timings` is the only
/// nondeterministic field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub timestep: f64,
    pub substeps: usize,
    /// Configurations at policy ticks, starting with `q_0, q_1`.
    pub configurations: Vec<Vec<f64>>,
    /// Reference configurations at the same ticks, in the world frame.
    pub targets: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// Normal impulse per contact summed over each tick.
    pub impulses: Vec<Vec<f64>>,
    /// Tangential impulses `β⁺ − β⁻` per contact summed over each tick.
    pub friction: Vec<Vec<f64>>,
    /// `(tick, contact)` of every detected touchdown.
    pub touchdowns: Vec<(usize, usize)>,
    pub solves: Vec<SolveRecord>,
    pub height_estimates: Vec<Vec<f64>>,
    pub max_penetration: f64,
    pub max_complementarity: f64,
    pub fell: bool,
    pub failure: Option<String>,
    #[serde(default)]
    pub timings: Vec<f64>,
}

impl EpisodeRecord {
    pub fn ticks(&self) -> usize {
        self.controls.len()
    }
}

/// Runs the policy against the nonlinear simulator. The simulator steps at
/// `h / substeps` and applies the held control impulse split evenly across
/// sub-steps. Touchdowns are detected from simulator impulses and feed the
/// height heuristic.
pub fn run_closed_loop(
    policy: &mut Policy,
    settings: &EpisodeSettings,
    q0: &DVector<f64>,
    q1: &DVector<f64>,
) -> Result<EpisodeRecord> {
    let model = &policy.model.clone();
    if settings.substeps == 0 {
        return Err(Error::validation("episode", "substeps must be positive"));
    }
    crate::contact::check_len("q0", model.nq, q0.len())?;
    crate::contact::check_len("q1", model.nq, q1.len())?;
    let n = settings.substeps as f64;
    let h = model.timestep;
    let sim_model: ModelSpec = model.with_payload(settings.payload).with_timestep(h / n);
    let threshold = policy.config.detection_fraction * model.total_mass() * model.gravity * h / n;
    let c = model.num_contacts();

    let mut record = EpisodeRecord {
        timestep: h,
        substeps: settings.substeps,
        configurations: vec![q0.as_slice().to_vec(), q1.as_slice().to_vec()],
        targets: vec![policy.reference.configuration(model, 0).as_slice().to_vec(), policy.reference.configuration(model, 1).as_slice().to_vec()],
        controls: vec![],
        impulses: vec![],
        friction: vec![],
        touchdowns: vec![],
        solves: vec![],
        height_estimates: vec![],
        max_penetration: 0.0,
        max_complementarity: 0.0,
        fell: false,
        failure: None,
        timings: vec![],
    };

    let mut q = q1.clone();
    let mut q_prev = q1 - (q1 - q0) / n;
    let mut warm: Option<ContactVariables> = None;
    // Simulator steps since each contact last carried load.
    let mut airborne = vec![usize::MAX; c];
    let mut sim_step = 0usize;

    'episode: for t in 1..=settings.ticks {
        let v = (&q - &q_prev) * (n / h);
        let x_prev = &q - &v * h;
        let start = Instant::now();
        let (u, solve) = policy.step(&x_prev, &q, t);
        record.timings.push(start.elapsed().as_secs_f64());
        record.solves.push(solve);
        let u_sub = &u / n;
        let mut impulses = vec![0.0; c];
        let mut friction = vec![0.0; c];

        for _ in 0..settings.substeps {
            let mut impulse: Option<DVector<f64>> = None;
            for d in settings.disturbances.iter().filter(|d| d.step == sim_step) {
                impulse = Some(impulse.map_or_else(|| d.impulse.clone(), |acc| acc + &d.impulse));
            }
            let program = StepProgram::new(&sim_model, &settings.terrain, &q_prev, &q, &u_sub)?.with_disturbance(impulse)?;
            let result = match solve_step(&program, warm.as_ref(), &settings.simulator) {
                Ok(r) if r.q_next.iter().all(|x| x.is_finite()) => r,
                Ok(_) => {
                    record.failure = Some(format!("simulator diverged at step {sim_step}"));
                    break 'episode;
                }
                Err(e) => {
                    record.failure = Some(format!("simulator failed at step {sim_step}: {e}"));
                    break 'episode;
                }
            };
            sim_step += 1;
            let phi = sim_model.signed_distance(&result.q_next, &settings.terrain);
            let mut measured = vec![f64::NAN; c];
            for i in 0..c {
                let gamma = result.contact.gamma[i];
                record.max_penetration = record.max_penetration.max(-phi[i]);
                record.max_complementarity = record.max_complementarity.max(gamma * result.contact.s_phi[i]);
                impulses[i] += gamma;
                friction[i] += result.contact.friction(i);
                if gamma > threshold {
                    // A bounce shorter than one policy tick is not a new touchdown.
                    if airborne[i] >= settings.substeps {
                        record.touchdowns.push((t, i));
                    }
                    airborne[i] = 0;
                } else {
                    airborne[i] = airborne[i].saturating_add(1);
                }
                measured[i] = settings.terrain.height(sim_model.contact_position(&result.q_next, i).x);
            }
            policy.update_height_estimate(&result.contact.gamma, &measured, h / n);
            q_prev = std::mem::replace(&mut q, result.q_next);
            warm = Some(result.contact);
        }

        record.controls.push(u.as_slice().to_vec());
        record.impulses.push(impulses);
        record.friction.push(friction);
        record.configurations.push(q.as_slice().to_vec());
        record.targets.push(policy.reference.configuration(model, t + 1).as_slice().to_vec());
        record.height_estimates.push(policy.estimator.heights.clone());

        let base_x = model.base.map_or(0.0, |[ix, _]| q[ix]);
        if model.body_height(&q) - settings.terrain.height(base_x) < settings.fall_height {
            record.fell = true;
            record.failure = Some(format!("fell at tick {t}"));
            break;
        }
    }
    Ok(record)
}
