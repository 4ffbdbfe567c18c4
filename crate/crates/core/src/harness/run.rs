use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::scenario::{perturb_initial, Scenario};
use crate::contact::{assemble_residual, StepSettings};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, TerrainProfile};
use crate::mpc::{build_policy, run_closed_loop, BuildReport, EpisodeRecord, EpisodeSettings, Policy, ReferenceTrajectory};

/// Largest stage residual of a reference under the nonlinear dynamics on
/// flat ground at `rho`.
pub fn reference_residual(model: &ModelSpec, reference: &ReferenceTrajectory, rho: f64) -> Result<f64> {
    reference.validate(model)?;
    let layout = crate::contact::ContactLayout::new(model.nq, model.num_contacts());
    let mut worst: f64 = 0.0;
    for k in 0..reference.stages() {
        let q = |j: usize| DVector::from_column_slice(&reference.configurations[j]);
        let mut w = DVector::zeros(layout.len());
        w.rows_mut(0, model.nq).copy_from(&q(k + 2));
        reference.contacts[k].write_into(&layout, &mut w);
        let u = DVector::from_column_slice(&reference.controls[k]);
        let r = assemble_residual(model, &TerrainProfile::Flat, &q(k), &q(k + 1), &u, &w, rho)?;
        worst = worst.max(r.norm());
    }
    Ok(worst)
}

/// Fails unless every stage of the reference satisfies the nonlinear step
/// residual at the simulator's `ρ` to the solver tolerance.
pub fn check_reference(model: &ModelSpec, reference: &ReferenceTrajectory, settings: &StepSettings) -> Result<f64> {
    let residual = reference_residual(model, reference, settings.solver.rho_target)?;
    if residual > settings.solver.residual_tol {
        return Err(Error::validation(
            "reference",
            format!(
                "{} {} violates the nonlinear dynamics (residual {residual:.3e} > {:.1e})",
                reference.model, reference.kind, settings.solver.residual_tol
            ),
        ));
    }
    Ok(residual)
}

/// A scenario with its model, reference and offline stage loaded.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub scenario: Scenario,
    pub model: ModelSpec,
    pub terrain: TerrainProfile,
    pub policy: Policy,
    pub build: BuildReport,
    pub reference_residual: f64,
}

impl PreparedScenario {
    pub fn new(scenario: &Scenario, cache: Option<&std::path::Path>) -> Result<Self> {
        let model = scenario.model_spec()?;
        scenario.validate(&model)?;
        let terrain = scenario.terrain.build()?;
        let reference = ReferenceTrajectory::load(&scenario.reference)?;
        let reference_residual = check_reference(&model, &reference, &StepSettings::default())?;
        let config = scenario.policy.config(&model);
        let (policy, build) = build_policy(&model, &reference, &config, &scenario.policy.objective, cache)?;
        Ok(PreparedScenario {
            scenario: scenario.clone(),
            model,
            terrain,
            policy,
            build,
            reference_residual,
        })
    }

    pub fn episode_settings(&self) -> EpisodeSettings {
        EpisodeSettings {
            ticks: self.scenario.ticks,
            substeps: self.scenario.policy.substeps,
            terrain: self.terrain.clone(),
            disturbances: self.scenario.disturbances(&self.model),
            payload: self.scenario.payload,
            fall_height: self.scenario.policy.fall_height,
            simulator: StepSettings::default(),
        }
    }

    /// Initial configurations of sample `stream`; unperturbed without a
    /// perturbation distribution.
    pub fn initial_state(&self, stream: u64) -> (DVector<f64>, DVector<f64>) {
        let reference = &self.policy.reference;
        let q0 = reference.configuration(&self.model, 0);
        let q1 = reference.configuration(&self.model, 1);
        match &self.scenario.perturbation {
            Some(p) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.scenario.seed);
                rng.set_stream(stream);
                perturb_initial(&self.model, &self.terrain, p, &mut rng, &q0, &q1)
            }
            None => (q0, q1),
        }
    }

    /// Runs one episode from the initial state of sample `stream`.
    pub fn run(&self, stream: u64) -> Result<EpisodeOutcome> {
        let (q0, q1) = self.initial_state(stream);
        let mut policy = self.policy.clone();
        policy.reset();
        let record = run_closed_loop(&mut policy, &self.episode_settings(), &q0, &q1)?;
        let metrics = Metrics::compute(&self.model, &record, &self.scenario.gait, policy.reference.stages());
        let failures = evaluate(&self.scenario, &self.model, &record, &metrics);
        Ok(EpisodeOutcome {
            stream,
            success: failures.is_empty(),
            failures,
            metrics,
            record,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub stream: u64,
    pub success: bool,
    /// Success criteria that were not met.
    pub failures: Vec<String>,
    pub metrics: Metrics,
    pub record: EpisodeRecord,
}

/// Checks the scenario's success criteria. Returns the unmet ones.
pub fn evaluate(scenario: &Scenario, model: &ModelSpec, record: &EpisodeRecord, metrics: &Metrics) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(f) = &record.failure {
        out.push(f.clone());
    }
    let spec = &scenario.success;
    if metrics.steps < spec.min_steps {
        out.push(format!("{} steps, expected at least {}", metrics.steps, spec.min_steps));
    }
    if let Some(bound) = spec.final_base_error {
        if !(metrics.final_base_error <= bound) {
            out.push(format!("final base error {:.3} exceeds {bound}", metrics.final_base_error));
        }
    }
    if let Some(x) = spec.reach_x {
        let ix = model.base.map_or(0, |[ix, _]| ix);
        let last = record.configurations.last().map_or(f64::NAN, |q| q[ix]);
        if !(last >= x) {
            out.push(format!("base reached x = {last:.3}, expected {x}"));
        }
    }
    let h = record.timestep;
    let t0 = scenario.disturbances.iter().map(|d| d.time).fold(f64::INFINITY, f64::min);
    let t0 = if t0.is_finite() { t0 } else { 0.0 };
    if let Some(u) = spec.upright {
        let from = ((t0 + u.within) / h).ceil() as usize;
        if from >= record.configurations.len() {
            out.push(format!("episode ended before t = {:.2} s", t0 + u.within));
        } else if let Some(k) = (from..record.configurations.len())
            .find(|&k| !(record.configurations[k][u.coordinate].abs() < u.tolerance))
        {
            out.push(format!(
                "coordinate {} is {:.4} at t = {:.2} s",
                u.coordinate,
                record.configurations[k][u.coordinate],
                k as f64 * h
            ));
        }
    }
    if let Some(rc) = &spec.recovery_contact {
        let start = (t0 / h).floor() as usize;
        let deadline = ((t0 + rc.within) / h).ceil() as usize;
        let loaded = rc
            .contacts
            .iter()
            .filter_map(|&i| metrics.first_load.get(i).copied().flatten())
            .any(|t| t >= start && t <= deadline);
        if !loaded {
            out.push(format!("contacts {:?} carried no load within {} s", rc.contacts, rc.within));
        }
    }
    out
}

/// Loads, checks and runs a scenario once.
pub fn run_scenario(scenario: &Scenario) -> Result<EpisodeOutcome> {
    PreparedScenario::new(scenario, None)?.run(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub scenario: String,
    pub seed: u64,
    pub samples: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub episodes: Vec<EpisodeOutcome>,
}

/// Runs `n_samples` perturbed episodes in parallel. Sample `i` draws its
/// initial state from stream `i` of the scenario seed. Episodes whose
/// simulation errors out count as failures.
pub fn run_monte_carlo(prepared: &PreparedScenario, n_samples: usize) -> MonteCarloReport {
    let episodes: Vec<EpisodeOutcome> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| prepared.run(i).unwrap_or_else(|e| failed_outcome(i, &e)))
        .collect();
    let successes = episodes.iter().filter(|e| e.success).count();
    MonteCarloReport {
        scenario: prepared.scenario.name.clone(),
        seed: prepared.scenario.seed,
        samples: n_samples,
        successes,
        success_rate: if n_samples == 0 { 0.0 } else { successes as f64 / n_samples as f64 },
        episodes,
    }
}

fn failed_outcome(stream: u64, error: &Error) -> EpisodeOutcome {
    let failure = Some(error.to_string());
    EpisodeOutcome {
        stream,
        success: false,
        failures: vec![error.to_string()],
        metrics: Metrics {
            failure: failure.clone(),
            ..Default::default()
        },
        record: EpisodeRecord {
            failure,
            ..Default::default()
        },
    }
}
