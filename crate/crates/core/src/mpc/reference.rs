use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::contact::ContactVariables;
use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Largest allowed mismatch between the end of a periodic reference and its
/// translated start.
pub const PERIODIC_TOLERANCE: f64 = 2e-2;

/// Reference configurations, controls and contact variables.
///
/// With `T = controls.len()` stages, `configurations` holds `T + 2` entries
/// and stage `k` maps `(q̄_k, q̄_{k+1}, ū_k)` to `q̄_{k+2}` with contact
/// variables `contacts[k]`. A periodic reference repeats with a per-cycle
/// base translation: `q̄_{k+T} = q̄_k + translation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub model: String,
    pub kind: String,
    pub timestep: f64,
    pub configurations: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub contacts: Vec<ContactVariables>,
    pub periodic: bool,
    /// Base translation `(dx, dz)` per cycle.
    pub translation: [f64; 2],
}

impl ReferenceTrajectory {
    pub fn stages(&self) -> usize {
        self.controls.len()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        let t = self.stages();
        let bad = |reason: String| Err(Error::validation("reference", reason));
        if self.model != model.name {
            return bad(format!("built for model '{}', not '{}'", self.model, model.name));
        }
        if t == 0 {
            return bad("no stages".into());
        }
        if self.configurations.len() != t + 2 {
            return bad(format!("{} configurations for {t} stages, expected {}", self.configurations.len(), t + 2));
        }
        if self.contacts.len() != t {
            return bad(format!("{} contact sets for {t} stages", self.contacts.len()));
        }
        if (self.timestep - model.timestep).abs() > 1e-9 * model.timestep {
            return bad(format!("time step {} differs from model time step {}", self.timestep, model.timestep));
        }
        let c = model.num_contacts();
        for (k, q) in self.configurations.iter().enumerate() {
            if q.len() != model.nq || q.iter().any(|v| !v.is_finite()) {
                return bad(format!("configuration {k} is malformed"));
            }
        }
        for (k, u) in self.controls.iter().enumerate() {
            if u.len() != model.nu || u.iter().any(|v| !v.is_finite()) {
                return bad(format!("control {k} is malformed"));
            }
        }
        for (k, v) in self.contacts.iter().enumerate() {
            let sizes = [v.gamma.len(), v.psi.len(), v.s_phi.len(), v.s_psi.len(), v.beta.len() / 2, v.eta.len() / 2];
            if sizes.iter().any(|&s| s != c) || v.beta.len() != 2 * c || v.eta.len() != 2 * c {
                return bad(format!("contact set {k} has wrong dimensions"));
            }
            if v.gamma.iter().chain(&v.beta).any(|x| !x.is_finite() || *x < 0.0) {
                return bad(format!("contact set {k} has negative impulses"));
            }
        }
        if self.periodic {
            let shift = model.translation(self.translation[0], self.translation[1]);
            for j in 0..2 {
                let start = DVector::from_column_slice(&self.configurations[j]) + &shift;
                let end = DVector::from_column_slice(&self.configurations[t + j]);
                let gap = (end - start).amax();
                if gap > PERIODIC_TOLERANCE {
                    return bad(format!("periodic closure gap {gap:.3e} exceeds {PERIODIC_TOLERANCE:e}"));
                }
            }
        }
        Ok(())
    }

    /// Stage whose linearization serves window position `k`, and the number
    /// of completed cycles.
    pub fn stage_index(&self, k: usize) -> (usize, usize) {
        let t = self.stages();
        if self.periodic {
            (k % t, k / t)
        } else {
            (k.min(t - 1), 0)
        }
    }

    /// Reference configuration at time index `k`, extended periodically
    /// or clamped to the final configuration.
    pub fn configuration(&self, model: &ModelSpec, k: usize) -> DVector<f64> {
        let t = self.stages();
        if self.periodic {
            let cycles = (k / t) as f64;
            let q = DVector::from_column_slice(&self.configurations[k % t]);
            model.translate(&q, cycles * self.translation[0], cycles * self.translation[1])
        } else {
            DVector::from_column_slice(&self.configurations[k.min(t + 1)])
        }
    }

    pub fn control(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.controls[self.stage_index(k).0])
    }

    /// Base translation applied at window position `k` relative to the
    /// stored cycle.
    pub fn cycle_offset(&self, k: usize) -> [f64; 2] {
        let cycles = self.stage_index(k).1 as f64;
        [cycles * self.translation[0], cycles * self.translation[1]]
    }
}
