//! `cimpc`: command-line driver for contact-implicit MPC experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cimpc::harness::{
    bench_stage_solvers, generate_reference, gnuplot_script, reference_file_name, run_monte_carlo,
    write_episode_csv, EpisodeOutcome, Metrics, PreparedScenario, Scenario, SolverBenchmark, TimingStats,
    REFERENCE_KINDS,
};
use cimpc::linearized::{cache_key, linearize_reference, LinearizationCache};
use cimpc::model::{ModelSpec, TerrainProfile};
use cimpc::mpc::ReferenceTrajectory;

#[derive(Parser)]
#[command(name = "cimpc", version, about = "Contact-implicit model-predictive control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the offline linearization cache of a reference.
    Linearize {
        #[arg(long)]
        reference: PathBuf,
        /// Built-in model; defaults to the model named in the reference.
        #[arg(long)]
        model: Option<String>,
        #[arg(long, default_value_t = 1e-4)]
        rho: f64,
        /// Cache file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one closed-loop episode.
    Run(RunArgs),
    /// Time the policy on a scenario against its replanning budget.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Passes over the reference stages in the solver micro-benchmark.
        #[arg(long, default_value_t = 20)]
        repetitions: usize,
    },
    /// Generate reference trajectories with the scripted gaits.
    Generate {
        /// Built-in model; omit together with --kind to generate every reference.
        #[arg(long, requires = "kind")]
        model: Option<String>,
        #[arg(long, requires = "model")]
        kind: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run perturbed episodes in parallel and report the success rate.
    MonteCarlo {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 25)]
        samples: usize,
    },
    /// Repeat the command recorded in an artifact directory's manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Linearization cache; built when missing or stale.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rho_mpc: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Policy rate in Hz; must match the reference time step.
    #[arg(long)]
    rate: Option<f64>,
    /// Episode length in policy ticks.
    #[arg(long)]
    ticks: Option<usize>,
    /// Dense LU for the stage solves instead of the condensed solver.
    #[arg(long)]
    dense_fallback: bool,
}

/// Everything needed to repeat a command from its artifact directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    scenario: PathBuf,
    out: PathBuf,
    overrides: Overrides,
    seed: u64,
    samples: Option<usize>,
    repetitions: Option<usize>,
    version: String,
}

/// Deterministic part of an episode's results.
#[derive(Debug, Serialize)]
struct EpisodeSummary<'a> {
    scenario: &'a str,
    seed: u64,
    success: bool,
    failures: &'a [String],
    metrics: Metrics,
}

#[derive(Debug, Serialize)]
struct BenchReport {
    scenario: String,
    rate: f64,
    budget: f64,
    timing: TimingStats,
    over_budget: usize,
    solver: SolverBenchmark,
}

#[derive(Debug)]
enum Failure {
    /// Bad input: usage, files, validation.
    Usage(String),
    /// The experiment ran but did not succeed.
    Episode(String),
}

impl From<cimpc::Error> for Failure {
    fn from(e: cimpc::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Linearize {
            reference,
            model,
            rho,
            out,
        } => linearize(&reference, model.as_deref(), rho, &out),
        Command::Run(args) => execute("run", &args.scenario, &args.out, args.cache.as_deref(), &args.overrides, None, None),
        Command::Bench { run, repetitions } => {
            execute("bench", &run.scenario, &run.out, run.cache.as_deref(), &run.overrides, None, Some(repetitions))
        }
        Command::MonteCarlo { run, samples } => {
            execute("monte-carlo", &run.scenario, &run.out, run.cache.as_deref(), &run.overrides, Some(samples), None)
        }
        Command::Generate { model, kind, out } => generate(model.as_deref(), kind.as_deref(), &out),
        Command::Rerun { manifest, out } => rerun(&manifest, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Episode(msg)) => {
            eprintln!("episode failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn linearize(reference_path: &Path, model: Option<&str>, rho: f64, out: &Path) -> Outcome {
    let start = Instant::now();
    let reference = ReferenceTrajectory::load(reference_path)?;
    let model = ModelSpec::builtin(model.unwrap_or(&reference.model))?;
    reference.validate(&model)?;
    if !(rho > 0.0) {
        return Err(Failure::Usage("rho must be positive".into()));
    }
    let terrain = TerrainProfile::Flat;
    let key = cache_key(&model, &terrain, &reference, rho)?;
    if let Some(cache) = LinearizationCache::load_matching(out, &key)? {
        println!("{}: {} stages, up to date", out.display(), cache.stages.len());
        return Ok(());
    }
    let stages = linearize_reference(&model, &terrain, &reference)?;
    let count = stages.len();
    LinearizationCache {
        key,
        model: model.name.clone(),
        rho,
        stages,
    }
    .save(out)?;
    println!("{}: {count} stages in {:.3} s", out.display(), start.elapsed().as_secs_f64());
    Ok(())
}

fn generate(model: Option<&str>, kind: Option<&str>, out: &Path) -> Outcome {
    let pairs: Vec<(&str, &str)> = match (model, kind) {
        (Some(m), Some(k)) => vec![(m, k)],
        _ => REFERENCE_KINDS.to_vec(),
    };
    fs::create_dir_all(out)?;
    for (m, k) in pairs {
        let start = Instant::now();
        let spec = ModelSpec::builtin(m)?;
        let reference = generate_reference(&spec, k)?;
        let path = out.join(reference_file_name(m, k));
        reference.save(&path)?;
        println!("{}: {} stages in {:.2} s", path.display(), reference.stages(), start.elapsed().as_secs_f64());
    }
    Ok(())
}

/// Applies command-line overrides and stores a self-contained copy of the
/// scenario and its reference in `out`.
fn prepare_scenario(scenario_path: &Path, overrides: &Overrides, out: &Path) -> Result<Scenario, Failure> {
    let mut scenario = Scenario::load(scenario_path)?;
    if let Some(seed) = overrides.seed {
        scenario.seed = seed;
    }
    if let Some(rho) = overrides.rho_mpc {
        scenario.policy.rho_mpc = rho;
    }
    if let Some(h) = overrides.horizon {
        scenario.policy.horizon = h;
    }
    if let Some(ticks) = overrides.ticks {
        scenario.ticks = ticks;
    }
    if overrides.dense_fallback {
        scenario.policy.dense = true;
    }
    let model = scenario.model_spec()?;
    if let Some(rate) = overrides.rate {
        if (rate * model.timestep - 1.0).abs() > 1e-9 {
            return Err(Failure::Usage(format!(
                "rate {rate} Hz does not match the reference time step {} s",
                model.timestep
            )));
        }
    }
    scenario.validate(&model)?;
    fs::create_dir_all(out)?;
    fs::copy(&scenario.reference, out.join("reference.json"))?;
    let mut stored = scenario.clone();
    stored.reference = PathBuf::from("reference.json");
    write_json(&out.join("scenario.json"), &stored)?;
    Ok(scenario)
}

fn execute(
    command: &str,
    scenario_path: &Path,
    out: &Path,
    cache: Option<&Path>,
    overrides: &Overrides,
    samples: Option<usize>,
    repetitions: Option<usize>,
) -> Outcome {
    if !scenario_path.is_file() {
        return Err(Failure::Usage(format!("scenario file {} not found", scenario_path.display())));
    }
    let scenario = prepare_scenario(scenario_path, overrides, out)?;
    let manifest = RunManifest {
        command: command.into(),
        scenario: scenario_path.to_path_buf(),
        out: out.to_path_buf(),
        overrides: overrides.clone(),
        seed: scenario.seed,
        samples,
        repetitions,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    let prepared = PreparedScenario::new(&scenario, cache)?;
    log::info!(
        "offline stage: {} stages in {:.3} s{}",
        prepared.build.stages,
        prepared.build.seconds,
        if prepared.build.from_cache { " (cached)" } else { "" }
    );
    match command {
        "run" => run_episode(&prepared, out),
        "bench" => bench(&prepared, out, repetitions.unwrap_or(20)),
        "monte-carlo" => monte_carlo(&prepared, out, samples.unwrap_or(25)),
        other => Err(Failure::Usage(format!("unknown command '{other}'"))),
    }
}

fn summarize<'a>(scenario: &'a Scenario, outcome: &'a EpisodeOutcome) -> EpisodeSummary<'a> {
    EpisodeSummary {
        scenario: &scenario.name,
        seed: scenario.seed,
        success: outcome.success,
        failures: &outcome.failures,
        metrics: Metrics {
            timing: TimingStats::default(),
            ..outcome.metrics.clone()
        },
    }
}

fn write_episode(prepared: &PreparedScenario, outcome: &EpisodeOutcome, dir: &Path) -> Outcome {
    let model = &prepared.model;
    write_json(&dir.join("summary.json"), &summarize(&prepared.scenario, outcome))?;
    write_json(&dir.join("timing.json"), &outcome.metrics.timing)?;
    let mut record = outcome.record.clone();
    record.timings.clear();
    write_json(&dir.join("record.json"), &record)?;
    write_episode_csv(&outcome.record, fs::File::create(dir.join("episode.csv"))?)?;
    fs::write(dir.join("plot.gp"), gnuplot_script("episode.csv", model.nq, model.nu, model.num_contacts()))?;
    Ok(())
}

fn run_episode(prepared: &PreparedScenario, out: &Path) -> Outcome {
    let outcome = prepared.run(0)?;
    write_episode(prepared, &outcome, out)?;
    let m = &outcome.metrics;
    println!(
        "{}: {} | steps {} | base rmse {:.4} m | max error {:.4} | p50 solve {:.2} ms",
        prepared.scenario.name,
        if outcome.success { "success" } else { "FAILURE" },
        m.steps,
        m.base_rmse,
        m.max_tracking_error,
        m.timing.p50 * 1e3
    );
    if outcome.success {
        Ok(())
    } else {
        Err(Failure::Episode(outcome.failures.join("; ")))
    }
}

fn bench(prepared: &PreparedScenario, out: &Path, repetitions: usize) -> Outcome {
    let outcome = prepared.run(0)?;
    let rate = prepared.policy.config.rate;
    let budget = 1.0 / rate;
    let timing = outcome.metrics.timing;
    let report = BenchReport {
        scenario: prepared.scenario.name.clone(),
        rate,
        budget,
        timing,
        over_budget: outcome.record.timings.iter().filter(|&&t| t > budget).count(),
        solver: bench_stage_solvers(&prepared.policy, repetitions)?,
    };
    write_json(&out.join("bench.json"), &report)?;
    println!(
        "{}: {} solves, budget {:.2} ms ({rate} Hz) | p50 {:.2} ms p90 {:.2} ms p99 {:.2} ms max {:.2} ms | over budget {} | dense/condensed {:.2}",
        report.scenario,
        timing.samples,
        budget * 1e3,
        timing.p50 * 1e3,
        timing.p90 * 1e3,
        timing.p99 * 1e3,
        timing.max * 1e3,
        report.over_budget,
        report.solver.ratio
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct MonteCarloSummary<'a> {
    scenario: &'a str,
    seed: u64,
    samples: usize,
    successes: usize,
    success_rate: f64,
    episodes: Vec<EpisodeSummary<'a>>,
}

fn monte_carlo(prepared: &PreparedScenario, out: &Path, samples: usize) -> Outcome {
    let start = Instant::now();
    let report = run_monte_carlo(prepared, samples);
    let records = out.join("episodes");
    fs::create_dir_all(&records)?;
    for e in &report.episodes {
        let dir = records.join(format!("{:04}", e.stream));
        fs::create_dir_all(&dir)?;
        write_episode(prepared, e, &dir)?;
    }
    let summary = MonteCarloSummary {
        scenario: &report.scenario,
        seed: report.seed,
        samples: report.samples,
        successes: report.successes,
        success_rate: report.success_rate,
        episodes: report.episodes.iter().map(|e| summarize(&prepared.scenario, e)).collect(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{}: {}/{} episodes succeeded in {:.1} s",
        report.scenario,
        report.successes,
        report.samples,
        start.elapsed().as_secs_f64()
    );
    if report.successes == report.samples {
        Ok(())
    } else {
        Err(Failure::Episode(format!("{} of {} episodes failed", report.samples - report.successes, report.samples)))
    }
}

fn rerun(manifest_path: &Path, out: &Path) -> Outcome {
    let manifest: RunManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    // The stored scenario already carries the overrides.
    let overrides = Overrides {
        seed: Some(manifest.seed),
        ..Overrides::default()
    };
    execute(
        &manifest.command,
        &dir.join("scenario.json"),
        out,
        None,
        &overrides,
        manifest.samples,
        manifest.repetitions,
    )
}
