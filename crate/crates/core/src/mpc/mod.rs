//! Receding-horizon contact-implicit policy: offline linearization of a
//! reference, online tracking solves at a fixed central-path parameter, and
//! the terrain-height heuristic.

mod closed_loop;
mod estimator;
mod policy;
mod reference;

pub use closed_loop::{run_closed_loop, EpisodeRecord, EpisodeSettings};
pub use estimator::HeightEstimator;
pub use policy::{build_policy, BuildReport, Objective, Policy, PolicyConfig, SolveRecord, WindowDynamics};
pub use reference::{ReferenceTrajectory, PERIODIC_TOLERANCE};
