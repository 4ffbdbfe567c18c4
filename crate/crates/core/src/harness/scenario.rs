use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contact::{penetration_correction, Disturbance};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, TerrainProfile};
use crate::mpc::{Objective, PolicyConfig};

/// One closed-loop experiment. Everything except wall-clock timings is
/// reproducible from the file and `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Built-in model name.
    pub model: String,
    /// Reference file, relative to the scenario file.
    pub reference: PathBuf,
    #[serde(default)]
    pub terrain: TerrainSpec,
    #[serde(default)]
    pub disturbances: Vec<DisturbanceSpec>,
    /// Mass added to the simulated body only.
    #[serde(default)]
    pub payload: f64,
    /// Initial-condition sampling for Monte Carlo runs.
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
    /// Episode length in policy ticks.
    pub ticks: usize,
    #[serde(default)]
    pub seed: u64,
    pub policy: PolicySpec,
    #[serde(default)]
    pub gait: GaitSpec,
    #[serde(default)]
    pub success: SuccessSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub horizon: usize,
    #[serde(default = "default_rho_mpc")]
    pub rho_mpc: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_true")]
    pub heuristic: bool,
    #[serde(default)]
    pub dense: bool,
    #[serde(default = "default_fall_height")]
    pub fall_height: f64,
    pub objective: Objective,
}

fn default_rho_mpc() -> f64 {
    1e-4
}

fn default_substeps() -> usize {
    5
}

fn default_true() -> bool {
    true
}

fn default_fall_height() -> f64 {
    0.15
}

impl PolicySpec {
    pub fn config(&self, model: &ModelSpec) -> PolicyConfig {
        PolicyConfig {
            rho_mpc: self.rho_mpc,
            heuristic: self.heuristic,
            dense: self.dense,
            ..PolicyConfig::new(model, self.horizon)
        }
    }
}

/// A generalized impulse applied at simulation time `time` (seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub time: f64,
    pub impulse: Vec<f64>,
}

/// Uniform initial-condition perturbations. The base moves by up to
/// `translation` horizontally and is raised by up to `translation`; the base
/// angle turns by up to `tilt`; every joint coordinate moves by up to `joint`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub translation: f64,
    pub tilt: f64,
    pub joint: f64,
}

/// Contact groups whose touchdowns count as hops or steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitSpec {
    /// Contacts of each foot. A group touchdown is any member's touchdown.
    pub groups: Vec<Vec<usize>>,
    /// Touchdowns of one group closer than this (seconds) count once.
    pub min_interval: f64,
}

impl Default for GaitSpec {
    fn default() -> Self {
        GaitSpec {
            groups: vec![],
            min_interval: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuccessSpec {
    #[serde(default)]
    pub min_steps: usize,
    /// Bound on the base position error (x, z) averaged over the last
    /// reference cycle.
    #[serde(default)]
    pub final_base_error: Option<f64>,
    #[serde(default)]
    pub upright: Option<Upright>,
    /// Contacts that must carry load within `within` seconds of the first
    /// disturbance.
    #[serde(default)]
    pub recovery_contact: Option<RecoveryContact>,
    /// Base x the episode must reach.
    #[serde(default)]
    pub reach_x: Option<f64>,
}

/// `|q[coordinate]| < tolerance` from `within` seconds after the first
/// disturbance until the end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Upright {
    pub coordinate: usize,
    pub tolerance: f64,
    pub within: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryContact {
    pub contacts: Vec<usize>,
    pub within: f64,
}

/// Terrain description. `RandomSteps` is generated from its own seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerrainSpec {
    #[default]
    Flat,
    Profile { profile: TerrainProfile },
    Staircase { start: f64, tread: f64, rise: f64, ramp: f64, count: usize },
    Incline { start: f64, degrees: f64, length: f64 },
    /// Steps of random tread and height; `rise` bounds each height change.
    /// A fraction `down` of the steps go down.
    RandomSteps {
        start: f64,
        tread: [f64; 2],
        rise: [f64; 2],
        ramp: f64,
        count: usize,
        #[serde(default)]
        down: f64,
        seed: u64,
    },
}

impl TerrainSpec {
    pub fn build(&self) -> Result<TerrainProfile> {
        let profile = match *self {
            TerrainSpec::Flat => TerrainProfile::Flat,
            TerrainSpec::Profile { ref profile } => profile.clone(),
            TerrainSpec::Staircase { start, tread, rise, ramp, count } => {
                TerrainProfile::staircase(start, tread, rise, ramp, count)
            }
            TerrainSpec::Incline { start, degrees, length } => TerrainProfile::incline(start, degrees, length),
            TerrainSpec::RandomSteps { start, tread, rise, ramp, count, down, seed } => {
                if !(tread[0] > ramp && tread[0] <= tread[1] && rise[0] <= rise[1] && (0.0..=1.0).contains(&down)) {
                    return Err(Error::validation("terrain", "random steps need ramp < tread and ordered ranges"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut points = vec![[start - tread[0], 0.0]];
                let (mut x, mut h) = (start, 0.0);
                for _ in 0..count {
                    let mut dh = rng.random_range(rise[0]..=rise[1]);
                    if rng.random::<f64>() < down {
                        dh = -dh;
                    }
                    points.push([x, h]);
                    h += dh;
                    points.push([x + ramp, h]);
                    x += rng.random_range(tread[0]..=tread[1]);
                }
                TerrainProfile::PiecewiseLinear { points, rounding: 0.0 }
            }
        };
        profile.validate()?;
        Ok(profile)
    }
}

impl Scenario {
    /// Reads a scenario and resolves its reference path against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut scenario: Scenario = serde_json::from_str(&text)?;
        if scenario.reference.is_relative() {
            let dir = path.parent().unwrap_or(Path::new("."));
            scenario.reference = dir.join(&scenario.reference);
        }
        Ok(scenario)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        ModelSpec::builtin(&self.model)
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        let bad = |reason: String| Err(Error::validation("scenario", reason));
        if self.policy.substeps == 0 {
            return bad("substeps must be positive".into());
        }
        if !(self.payload >= 0.0 && self.payload.is_finite()) {
            return bad("payload must be nonnegative".into());
        }
        for d in &self.disturbances {
            if d.impulse.len() != model.nq || !(d.time >= 0.0) {
                return bad(format!("disturbance at t = {} is malformed", d.time));
            }
        }
        for group in &self.gait.groups {
            if group.iter().any(|&i| i >= model.num_contacts()) {
                return bad("gait group names a missing contact".into());
            }
        }
        if let Some(p) = self.perturbation {
            if [p.translation, p.tilt, p.joint].iter().any(|x| !(*x >= 0.0)) {
                return bad("perturbation magnitudes must be nonnegative".into());
            }
        }
        self.policy.config(model).validate(model)?;
        Ok(())
    }

    /// Disturbances indexed by simulator step.
    pub fn disturbances(&self, model: &ModelSpec) -> Vec<Disturbance> {
        let dt = model.timestep / self.policy.substeps as f64;
        self.disturbances
            .iter()
            .map(|d| Disturbance {
                step: (d.time / dt).round() as usize,
                impulse: DVector::from_column_slice(&d.impulse),
            })
            .collect()
    }
}

/// Applies one sample of `perturbation` to both initial configurations, then
/// lifts the base until no ground contact penetrates.
pub fn perturb_initial(
    model: &ModelSpec,
    terrain: &TerrainProfile,
    perturbation: &Perturbation,
    rng: &mut impl Rng,
    q0: &DVector<f64>,
    q1: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let mut delta = DVector::zeros(model.nq);
    let mut sample = |bound: f64| if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 };
    let joints_from = match model.base {
        Some([ix, iz]) => {
            delta[ix] = sample(perturbation.translation);
            delta[iz] = sample(perturbation.translation).abs();
            delta[2] = sample(perturbation.tilt);
            3
        }
        None => 0,
    };
    for j in joints_from..model.nq {
        delta[j] = sample(perturbation.joint);
    }
    let (mut a, mut b) = (q0 + &delta, q1 + &delta);
    let lift = penetration_correction(model, terrain, &a).max(penetration_correction(model, terrain, &b));
    if lift > 0.0 {
        a = model.translate(&a, 0.0, lift);
        b = model.translate(&b, 0.0, lift);
    }
    (a, b)
}
