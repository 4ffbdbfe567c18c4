use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{check_len, solve_step, ContactVariables, StepProgram, StepSettings};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, TerrainProfile};

/// Additive generalized impulse applied at one simulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance {
    pub step: usize,
    pub impulse: DVector<f64>,
}

/// Simulated rollout. `configurations[k]` is the configuration at time
/// `k h`; control `k` and contact impulses `k` act between configurations
/// `k + 1` and `k + 2`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub timestep: f64,
    pub configurations: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub contacts: Vec<ContactVariables>,
    pub iterations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub steps: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub max_energy: f64,
    /// Largest penetration depth, zero if the rollout never penetrated.
    pub max_penetration: f64,
    pub total_iterations: usize,
    pub max_iterations: usize,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    /// Velocity `(q_k − q_{k−1}) / h` for `k ≥ 1`.
    pub fn velocity(&self, k: usize) -> DVector<f64> {
        (&self.configurations[k] - &self.configurations[k - 1]) / self.timestep
    }

    pub fn last(&self) -> &DVector<f64> {
        self.configurations.last().expect("trajectory has configurations")
    }

    /// Mechanical energy at configuration `k ≥ 1`.
    pub fn energy(&self, model: &ModelSpec, k: usize) -> f64 {
        let q = &self.configurations[k];
        model.kinetic_energy(q, &self.velocity(k)) + model.potential_energy(q)
    }

    pub fn summary(&self, model: &ModelSpec, terrain: &TerrainProfile) -> TrajectorySummary {
        let count = self.configurations.len();
        let energies: Vec<f64> = (1..count).map(|k| self.energy(model, k)).collect();
        let max_penetration = self
            .configurations
            .iter()
            .flat_map(|q| model.signed_distance(q, terrain).iter().copied().collect::<Vec<_>>())
            .fold(0.0_f64, |acc, phi| acc.max(-phi));
        TrajectorySummary {
            steps: self.steps(),
            initial_energy: energies[0],
            final_energy: *energies.last().unwrap_or(&energies[0]),
            max_energy: energies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            max_penetration,
            total_iterations: self.iterations.iter().sum(),
            max_iterations: self.iterations.iter().copied().max().unwrap_or(0),
        }
    }

    /// CSV with columns `t, q…, v…, u…, gamma…, beta…`, one row per step.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let n = self.configurations[0].len();
        let m = self.controls.first().map_or(0, |u| u.len());
        let c = self.contacts.first().map_or(0, |v| v.gamma.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("q{i}")));
        header.extend((0..n).map(|i| format!("v{i}")));
        header.extend((0..m).map(|i| format!("u{i}")));
        header.extend((0..c).map(|i| format!("gamma{i}")));
        for i in 0..c {
            header.push(format!("beta{i}_pos"));
            header.push(format!("beta{i}_neg"));
        }
        out.write_record(&header)?;
        for k in 0..self.steps() {
            let idx = k + 2;
            let mut row = vec![idx as f64 * self.timestep];
            row.extend(self.configurations[idx].iter());
            row.extend(self.velocity(idx).iter());
            row.extend(self.controls[k].iter());
            row.extend(self.contacts[k].gamma.iter());
            row.extend(self.contacts[k].beta.iter());
            out.write_record(row.iter().map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Rolls out the nonlinear dynamics from `(q0, q1)` under a control
/// sequence, with optional additive impulse disturbances. Contact variables
/// are warm-started from the previous step.
pub fn simulate(
    model: &ModelSpec,
    terrain: &TerrainProfile,
    q0: &DVector<f64>,
    q1: &DVector<f64>,
    controls: &[DVector<f64>],
    disturbances: &[Disturbance],
    settings: &StepSettings,
) -> Result<Trajectory> {
    check_len("q0", model.nq, q0.len())?;
    check_len("q1", model.nq, q1.len())?;
    let mut traj = Trajectory {
        timestep: model.timestep,
        configurations: vec![q0.clone(), q1.clone()],
        controls: Vec::with_capacity(controls.len()),
        contacts: Vec::with_capacity(controls.len()),
        iterations: Vec::with_capacity(controls.len()),
    };
    let mut warm: Option<ContactVariables> = None;
    for (k, u) in controls.iter().enumerate() {
        let mut impulse: Option<DVector<f64>> = None;
        for d in disturbances.iter().filter(|d| d.step == k) {
            check_len("disturbance", model.nq, d.impulse.len())?;
            impulse = Some(impulse.map_or_else(|| d.impulse.clone(), |acc| acc + &d.impulse));
        }
        let len = traj.configurations.len();
        let program = StepProgram::new(model, terrain, &traj.configurations[len - 2], &traj.configurations[len - 1], u)?
            .with_disturbance(impulse)?;
        let result = solve_step(&program, warm.as_ref(), settings).map_err(|e| match e {
            Error::NoConvergence { residual, rho, .. } => Error::NoConvergence { step: k, residual, rho },
            other => other,
        })?;
        traj.configurations.push(result.q_next);
        traj.controls.push(u.clone());
        traj.iterations.push(result.iterations);
        warm = Some(result.contact.clone());
        traj.contacts.push(result.contact);
    }
    Ok(traj)
}
