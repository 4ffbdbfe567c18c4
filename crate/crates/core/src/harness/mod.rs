//! Experiments: scripted reference generation, scenario files, closed-loop
//! runs, Monte Carlo studies and episode metrics.

mod export;
pub mod generate;
mod metrics;
mod run;
mod scenario;

use std::path::PathBuf;

pub use export::{bench_stage_solvers, gnuplot_script, write_episode_csv, SolverBenchmark};
pub use generate::{generate_reference, reference_file_name, REFERENCE_KINDS};
pub use metrics::{count_steps, Metrics, TimingStats};
pub use run::{
    check_reference, evaluate, reference_residual, run_monte_carlo, run_scenario, EpisodeOutcome, MonteCarloReport,
    PreparedScenario,
};
pub use scenario::{
    perturb_initial, DisturbanceSpec, GaitSpec, Perturbation, PolicySpec, RecoveryContact, Scenario, SuccessSpec,
    TerrainSpec, Upright,
};

/// Directory of the shipped models, references and scenarios.
pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}
