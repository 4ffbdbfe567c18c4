use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BUILTIN_MODELS: [&str; 5] = ["particle", "hopper", "pushbot", "quadruped", "biped"];

fn default_gravity() -> f64 {
    9.81
}

/// Physical parameters of a shipped system, as stored in model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    /// Point mass in the vertical plane, q = (x, z).
    Particle {
        mass: f64,
        friction: f64,
        timestep: f64,
        #[serde(default = "default_gravity")]
        gravity: f64,
    },
    /// Telescoping-leg hopper, q = (x, z, θ, r), with leg and foot mass lumped at the body.
    Hopper {
        body_mass: f64,
        leg_mass: f64,
        body_inertia: f64,
        leg_inertia: f64,
        friction: f64,
        timestep: f64,
        #[serde(default = "default_gravity")]
        gravity: f64,
    },
    /// Inverted pendulum with a prismatic arm between two walls, q = (θ, d).
    Pushbot {
        pendulum_mass: f64,
        pendulum_length: f64,
        pendulum_inertia: f64,
        arm_mass: f64,
        wall_distance: f64,
        friction: f64,
        timestep: f64,
        #[serde(default = "default_gravity")]
        gravity: f64,
    },
    /// Planar quadruped, q = (x, z, θ, hip₁, knee₁, …, hip₄, knee₄).
    Quadruped {
        torso_mass: f64,
        torso_inertia: f64,
        hip_offset: f64,
        thigh_mass: f64,
        thigh_length: f64,
        thigh_inertia: f64,
        calf_mass: f64,
        calf_length: f64,
        calf_inertia: f64,
        friction: f64,
        timestep: f64,
        #[serde(default = "default_gravity")]
        gravity: f64,
    },
    /// Planar biped with toe and heel contacts,
    /// q = (x, z, θ, hipₗ, kneeₗ, ankleₗ, hipᵣ, kneeᵣ, ankleᵣ).
    Biped {
        torso_mass: f64,
        torso_inertia: f64,
        torso_height: f64,
        thigh_mass: f64,
        thigh_length: f64,
        thigh_inertia: f64,
        calf_mass: f64,
        calf_length: f64,
        calf_inertia: f64,
        foot_mass: f64,
        foot_inertia: f64,
        toe_length: f64,
        heel_length: f64,
        friction: f64,
        timestep: f64,
        #[serde(default = "default_gravity")]
        gravity: f64,
    },
}

impl ModelParams {
    pub fn builtin(name: &str) -> Result<Self> {
        let text = match name {
            "particle" => include_str!("../../data/models/particle.json"),
            "hopper" => include_str!("../../data/models/hopper.json"),
            "pushbot" => include_str!("../../data/models/pushbot.json"),
            "quadruped" => include_str!("../../data/models/quadruped.json"),
            "biped" => include_str!("../../data/models/biped.json"),
            other => {
                return Err(Error::validation(
                    "model",
                    format!("unknown model '{other}', expected one of {BUILTIN_MODELS:?}"),
                ))
            }
        };
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: ModelParams = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelParams::Particle { .. } => "particle",
            ModelParams::Hopper { .. } => "hopper",
            ModelParams::Pushbot { .. } => "pushbot",
            ModelParams::Quadruped { .. } => "quadruped",
            ModelParams::Biped { .. } => "biped",
        }
    }

    fn values(&self) -> Vec<(&'static str, f64)> {
        match *self {
            ModelParams::Particle { mass, friction, timestep, gravity } => {
                vec![("mass", mass), ("friction", friction), ("timestep", timestep), ("gravity", gravity)]
            }
            ModelParams::Hopper { body_mass, leg_mass, body_inertia, leg_inertia, friction, timestep, gravity } => vec![
                ("body_mass", body_mass),
                ("leg_mass", leg_mass),
                ("body_inertia", body_inertia),
                ("leg_inertia", leg_inertia),
                ("friction", friction),
                ("timestep", timestep),
                ("gravity", gravity),
            ],
            ModelParams::Pushbot {
                pendulum_mass,
                pendulum_length,
                pendulum_inertia,
                arm_mass,
                wall_distance,
                friction,
                timestep,
                gravity,
            } => vec![
                ("pendulum_mass", pendulum_mass),
                ("pendulum_length", pendulum_length),
                ("pendulum_inertia", pendulum_inertia),
                ("arm_mass", arm_mass),
                ("wall_distance", wall_distance),
                ("friction", friction),
                ("timestep", timestep),
                ("gravity", gravity),
            ],
            ModelParams::Quadruped {
                torso_mass,
                torso_inertia,
                hip_offset,
                thigh_mass,
                thigh_length,
                thigh_inertia,
                calf_mass,
                calf_length,
                calf_inertia,
                friction,
                timestep,
                gravity,
            } => vec![
                ("torso_mass", torso_mass),
                ("torso_inertia", torso_inertia),
                ("hip_offset", hip_offset),
                ("thigh_mass", thigh_mass),
                ("thigh_length", thigh_length),
                ("thigh_inertia", thigh_inertia),
                ("calf_mass", calf_mass),
                ("calf_length", calf_length),
                ("calf_inertia", calf_inertia),
                ("friction", friction),
                ("timestep", timestep),
                ("gravity", gravity),
            ],
            ModelParams::Biped {
                torso_mass,
                torso_inertia,
                torso_height,
                thigh_mass,
                thigh_length,
                thigh_inertia,
                calf_mass,
                calf_length,
                calf_inertia,
                foot_mass,
                foot_inertia,
                toe_length,
                heel_length,
                friction,
                timestep,
                gravity,
            } => vec![
                ("torso_mass", torso_mass),
                ("torso_inertia", torso_inertia),
                ("torso_height", torso_height),
                ("thigh_mass", thigh_mass),
                ("thigh_length", thigh_length),
                ("thigh_inertia", thigh_inertia),
                ("calf_mass", calf_mass),
                ("calf_length", calf_length),
                ("calf_inertia", calf_inertia),
                ("foot_mass", foot_mass),
                ("foot_inertia", foot_inertia),
                ("toe_length", toe_length),
                ("heel_length", heel_length),
                ("friction", friction),
                ("timestep", timestep),
                ("gravity", gravity),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, value) in self.values() {
            let ok = match key {
                "friction" | "gravity" => value.is_finite() && value >= 0.0,
                _ => value.is_finite() && value > 0.0,
            };
            if !ok {
                return Err(Error::validation(
                    "model parameters",
                    format!("{}: '{key}' must be positive and finite, got {value}", self.name()),
                ));
            }
        }
        Ok(())
    }
}
