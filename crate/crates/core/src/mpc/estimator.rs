use serde::{Deserialize, Serialize};

use crate::model::{ModelSpec, Surface};

/// Per-contact terrain-height estimates `a`, updated on touchdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightEstimator {
    pub heights: Vec<f64>,
    /// Contacts against the ground; wall contacts are never updated.
    pub ground: Vec<bool>,
}

impl HeightEstimator {
    pub fn new(model: &ModelSpec) -> Self {
        HeightEstimator {
            heights: vec![0.0; model.num_contacts()],
            ground: model.contacts.iter().map(|c| c.surface == Surface::Ground).collect(),
        }
    }

    /// Sets `a_i` to the measured height for every detected ground contact.
    /// Returns whether any estimate changed.
    pub fn update(&mut self, detected: &[bool], measured: &[f64]) -> bool {
        let mut changed = false;
        for i in 0..self.heights.len() {
            if self.ground[i] && detected[i] && measured[i].is_finite() && self.heights[i] != measured[i] {
                self.heights[i] = measured[i];
                changed = true;
            }
        }
        changed
    }

    /// Mean estimated ground height, used as the vertical offset of the
    /// policy's frame.
    pub fn elevation(&self) -> f64 {
        let (sum, count) = self
            .heights
            .iter()
            .zip(&self.ground)
            .filter(|(_, &g)| g)
            .fold((0.0, 0usize), |(s, c), (h, _)| (s + h, c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Gap-row shifts for a policy frame translated vertically by `dz`:
    /// the believed gap is `φ_flat(q − dz) + dz − a_i`.
    pub fn gap_shift(&self, dz: f64) -> Vec<f64> {
        self.heights
            .iter()
            .zip(&self.ground)
            .map(|(h, &g)| if g { dz - h } else { 0.0 })
            .collect()
    }

    pub fn reset(&mut self) {
        self.heights.iter_mut().for_each(|h| *h = 0.0);
    }
}
