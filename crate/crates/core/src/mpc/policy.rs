use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{HeightEstimator, ReferenceTrajectory};
use crate::error::{Error, Result};
use crate::linalg::stack;
use crate::linearized::{
    cache_key, linearize_reference, linearized_step_jacobians, step_linearized, LinearizationCache,
    LinearizedSettings, StageLinearization,
};
use crate::model::{ModelSpec, TerrainProfile};
use crate::trajopt::{
    lifted_weight, solve_tracking, StageDynamics, StageEval, TrackingProblem, TrackingResult, TrackingSettings,
    WarmStart, Weights,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Number of lifted states in the window, including the fixed first one.
    pub horizon: usize,
    pub rho_mpc: f64,
    /// Policy rate in Hz; must equal the reference rate.
    pub rate: f64,
    /// Touchdown threshold as a fraction of `m g h`.
    pub detection_fraction: f64,
    pub heuristic: bool,
    pub tracking: TrackingSettings,
    /// Use dense LU for the stage solves instead of the condensed solver.
    #[serde(default)]
    pub dense: bool,
}

impl PolicyConfig {
    pub fn new(model: &ModelSpec, horizon: usize) -> Self {
        PolicyConfig {
            horizon,
            rho_mpc: 1e-4,
            rate: 1.0 / model.timestep,
            detection_fraction: 0.1,
            heuristic: true,
            tracking: TrackingSettings::default(),
            dense: false,
        }
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::validation("policy", "horizon must be at least 2"));
        }
        if !(self.rho_mpc > 0.0) {
            return Err(Error::validation("policy", "rho_mpc must be positive"));
        }
        if (self.rate * model.timestep - 1.0).abs() > 1e-9 {
            return Err(Error::validation(
                "policy",
                format!("rate {} Hz does not match the reference time step {}", self.rate, model.timestep),
            ));
        }
        Ok(())
    }
}

/// Diagonal tracking weights on configurations, velocities and controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub configuration: Vec<f64>,
    pub velocity: Vec<f64>,
    pub control: Vec<f64>,
    /// Multiplier on the final state's weight.
    pub terminal: f64,
}

impl Objective {
    pub fn weights(&self, model: &ModelSpec, stages: usize) -> Result<Weights> {
        if self.configuration.len() != model.nq || self.velocity.len() != model.nq || self.control.len() != model.nu {
            return Err(Error::validation("objective", "weight vector lengths do not match the model"));
        }
        let q = lifted_weight(
            &DVector::from_column_slice(&self.configuration),
            &DVector::from_column_slice(&self.velocity),
            model.timestep,
        );
        let r = DMatrix::from_diagonal(&DVector::from_column_slice(&self.control));
        Weights::uniform(stages, &q, &(&q * self.terminal), &r)
    }
}

/// Where the offline stage came from and how long it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub key: String,
    pub from_cache: bool,
    pub stages: usize,
    pub seconds: f64,
}

/// Diagnostics of one policy evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub tick: usize,
    pub iterations: usize,
    pub kkt_norm: f64,
    pub converged: bool,
    /// The optimizer failed and the previous control was reused.
    pub failed: bool,
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub model: ModelSpec,
    pub reference: ReferenceTrajectory,
    pub config: PolicyConfig,
    pub weights: Arc<Weights>,
    pub stages: Arc<Vec<StageLinearization>>,
    pub estimator: HeightEstimator,
    warm: Option<WarmStart>,
    last_control: DVector<f64>,
}

/// Linearizes the reference on flat ground, or loads a matching cache.
pub fn build_policy(
    model: &ModelSpec,
    reference: &ReferenceTrajectory,
    config: &PolicyConfig,
    objective: &Objective,
    cache: Option<&Path>,
) -> Result<(Policy, BuildReport)> {
    let start = Instant::now();
    config.validate(model)?;
    reference.validate(model)?;
    let terrain = TerrainProfile::Flat;
    let key = cache_key(model, &terrain, reference, config.rho_mpc)?;
    let cached = match cache {
        Some(path) => LinearizationCache::load_matching(path, &key)?,
        None => None,
    };
    let from_cache = cached.is_some();
    let stages = match cached {
        Some(c) => c.stages,
        None => {
            let stages = linearize_reference(model, &terrain, reference)?;
            if let Some(path) = cache {
                LinearizationCache {
                    key: key.clone(),
                    model: model.name.clone(),
                    rho: config.rho_mpc,
                    stages: stages.clone(),
                }
                .save(path)?;
            }
            stages
        }
    };
    let weights = objective.weights(model, config.horizon - 1)?;
    let policy = Policy {
        model: model.clone(),
        reference: reference.clone(),
        config: config.clone(),
        weights: Arc::new(weights),
        estimator: HeightEstimator::new(model),
        warm: None,
        last_control: DVector::from_column_slice(&reference.controls[0]),
        stages: Arc::new(stages),
    };
    let report = BuildReport {
        key,
        from_cache,
        stages: policy.stages.len(),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((policy, report))
}

/// Stage maps of one window: linearized stages evaluated in a frame
/// translated by `offsets[k]`, with the heuristic's gap shifts.
pub struct WindowDynamics<'a> {
    model: &'a ModelSpec,
    stages: Vec<&'a StageLinearization>,
    offsets: Vec<DVector<f64>>,
    gap_shift: Vec<Vec<f64>>,
    settings: LinearizedSettings,
}

impl StageDynamics for WindowDynamics<'_> {
    fn nq(&self) -> usize {
        self.model.nq
    }

    fn nu(&self) -> usize {
        self.model.nu
    }

    fn stages(&self) -> usize {
        self.stages.len()
    }

    fn evaluate(
        &self,
        k: usize,
        q_prev: &DVector<f64>,
        q: &DVector<f64>,
        u: &DVector<f64>,
        warm: Option<&DVector<f64>>,
        jacobians: bool,
    ) -> Result<StageEval> {
        let stage = self.stages[k];
        let offset = &self.offsets[k];
        let q_prev = q_prev - offset;
        let q = q - offset;
        let shift = Some(self.gap_shift[k].as_slice());
        let result = step_linearized(stage, &q_prev, &q, u, shift, warm, &self.settings)?;
        let jacobians = if jacobians {
            let j = linearized_step_jacobians(stage, &q_prev, &q, u, shift, &result, self.settings.rho, self.settings.dense)?;
            Some((j.wrt_q_prev, j.wrt_q, j.wrt_u))
        } else {
            None
        };
        Ok(StageEval {
            q_next: &result.q_next + offset,
            jacobians,
            warm: Some(result.w),
        })
    }
}

impl Policy {
    /// Vertical offset of the policy frame.
    fn elevation(&self) -> f64 {
        if self.config.heuristic {
            self.estimator.elevation()
        } else {
            0.0
        }
    }

    /// Reference configuration at time index `k` in the policy frame.
    pub fn target(&self, k: usize) -> DVector<f64> {
        let q = self.reference.configuration(&self.model, k);
        self.model.translate(&q, 0.0, self.elevation())
    }

    /// Window dynamics and tracking targets for policy tick `t ≥ 1`.
    pub fn window(&self, t: usize) -> (WindowDynamics<'_>, Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let stages = self.config.horizon - 1;
        let dz = self.elevation();
        let mut dynamics = WindowDynamics {
            model: &self.model,
            stages: Vec::with_capacity(stages),
            offsets: Vec::with_capacity(stages),
            gap_shift: Vec::with_capacity(stages),
            settings: LinearizedSettings {
                dense: self.config.dense,
                ..LinearizedSettings::new(self.config.rho_mpc)
            },
        };
        let mut x_ref = Vec::with_capacity(stages);
        let mut u_ref = Vec::with_capacity(stages);
        for k in 0..stages {
            let j = t - 1 + k;
            let (index, _) = self.reference.stage_index(j);
            let [cx, cz] = self.reference.cycle_offset(j);
            dynamics.stages.push(&self.stages[index]);
            dynamics.offsets.push(self.model.translation(cx, cz + dz));
            dynamics.gap_shift.push(self.estimator.gap_shift(cz + dz));
            x_ref.push(stack(&[&self.target(j + 1), &self.target(j + 2)]));
            u_ref.push(self.reference.control(j));
        }
        (dynamics, x_ref, u_ref)
    }

    /// Solves the window at tick `t` from `x_init = (q_prev, q)` and returns
    /// the first control. On solver failure the previous control is returned
    /// and the record is flagged.
    pub fn step(&mut self, q_prev: &DVector<f64>, q: &DVector<f64>, t: usize) -> (DVector<f64>, SolveRecord) {
        let t = t.max(1);
        let outcome = self.solve(q_prev, q, t);
        match outcome {
            Ok(result) => {
                let u = result.first_control().clone();
                let record = SolveRecord {
                    tick: t,
                    iterations: result.iterations,
                    kkt_norm: result.kkt_norm,
                    converged: result.converged,
                    failed: false,
                };
                self.warm = Some(WarmStart::from_previous(&result));
                self.last_control = u.clone();
                (u, record)
            }
            Err(e) => {
                log::warn!("policy solve failed at tick {t}: {e}");
                self.warm = None;
                (
                    self.last_control.clone(),
                    SolveRecord {
                        tick: t,
                        iterations: 0,
                        kkt_norm: f64::NAN,
                        converged: false,
                        failed: true,
                    },
                )
            }
        }
    }

    pub fn solve(&self, q_prev: &DVector<f64>, q: &DVector<f64>, t: usize) -> Result<TrackingResult> {
        crate::contact::check_len("q_prev", self.model.nq, q_prev.len())?;
        crate::contact::check_len("q", self.model.nq, q.len())?;
        let (dynamics, x_ref, u_ref) = self.window(t);
        let problem = TrackingProblem {
            dynamics: &dynamics,
            weights: &self.weights,
            x_init: stack(&[q_prev, q]),
            x_ref,
            u_ref,
        };
        solve_tracking(&problem, self.warm.as_ref(), &self.config.tracking)
    }

    /// Touchdown detection from per-contact normal impulses over a
    /// simulation step of length `h`, then the height update.
    pub fn update_height_estimate(&mut self, impulses: &[f64], measured: &[f64], h: f64) -> bool {
        let threshold = self.config.detection_fraction * self.model.total_mass() * self.model.gravity * h;
        let detected: Vec<bool> = impulses.iter().map(|&g| g > threshold).collect();
        self.estimator.update(&detected, measured)
    }

    /// Clears warm starts and height estimates.
    pub fn reset(&mut self) {
        self.warm = None;
        self.estimator.reset();
        self.last_control = DVector::from_column_slice(&self.reference.controls[0]);
    }
}
