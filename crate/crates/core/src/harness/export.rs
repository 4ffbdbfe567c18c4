use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linearized::{step_linearized, LinearizedSettings};
use crate::mpc::{EpisodeRecord, Policy};

/// CSV with one row per policy tick: `t, q…, ref…, u…, gamma…, friction…,
/// height…`. Row `k` holds the state at the start of tick `k`, the control
/// applied during it and the impulses it produced.
pub fn write_episode_csv<W: Write>(record: &EpisodeRecord, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let n = record.configurations.first().map_or(0, |q| q.len());
    let m = record.controls.first().map_or(0, |u| u.len());
    let c = record.impulses.first().map_or(0, |g| g.len());
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("q{i}")));
    header.extend((0..n).map(|i| format!("ref{i}")));
    header.extend((0..m).map(|i| format!("u{i}")));
    header.extend((0..c).map(|i| format!("gamma{i}")));
    header.extend((0..c).map(|i| format!("friction{i}")));
    header.extend((0..c).map(|i| format!("height{i}")));
    out.write_record(&header)?;
    for k in 1..=record.ticks() {
        let mut row = vec![k as f64 * record.timestep];
        row.extend(&record.configurations[k]);
        row.extend(&record.targets[k]);
        row.extend(&record.controls[k - 1]);
        row.extend(&record.impulses[k - 1]);
        row.extend(&record.friction[k - 1]);
        row.extend(&record.height_estimates[k - 1]);
        out.write_record(row.iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Gnuplot script plotting the tracked coordinates and the contact impulses
/// of a CSV written by [`write_episode_csv`].
pub fn gnuplot_script(csv_name: &str, nq: usize, nu: usize, nc: usize) -> String {
    let q = |i: usize| 2 + i;
    let r = |i: usize| 2 + nq + i;
    let g = |i: usize| 2 + 2 * nq + nu + i;
    let mut s = String::new();
    s.push_str("set datafile separator ','\nset key autotitle columnhead\nset multiplot layout 2,1\n");
    s.push_str("set title 'configuration vs reference'\nplot ");
    let lines: Vec<String> = (0..nq.min(3))
        .flat_map(|i| {
            [
                format!("'{csv_name}' using 1:{} with lines", q(i)),
                format!("'{csv_name}' using 1:{} with lines dashtype 2", r(i)),
            ]
        })
        .collect();
    s.push_str(&lines.join(", \\\n     "));
    s.push_str("\nset title 'normal impulses'\nplot ");
    let lines: Vec<String> = (0..nc).map(|i| format!("'{csv_name}' using 1:{} with lines", g(i))).collect();
    s.push_str(&lines.join(", \\\n     "));
    s.push_str("\nunset multiplot\n");
    s
}

/// Wall time of the linearized stage solves at the reference points, with
/// the condensed and the dense factorization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverBenchmark {
    pub solves: usize,
    pub condensed_seconds: f64,
    pub dense_seconds: f64,
    /// `dense / condensed`.
    pub ratio: f64,
}

/// Times `repetitions` passes over every stage of the policy, solving each
/// stage from its linearization point with both factorizations.
pub fn bench_stage_solvers(policy: &Policy, repetitions: usize) -> Result<SolverBenchmark> {
    let nq = policy.model.nq;
    let time = |dense: bool| -> Result<f64> {
        let settings = LinearizedSettings {
            dense,
            ..LinearizedSettings::new(policy.config.rho_mpc)
        };
        let start = Instant::now();
        for _ in 0..repetitions {
            for stage in policy.stages.iter() {
                let theta = &stage.theta_bar;
                let q_prev: DVector<f64> = theta.rows(0, nq).into_owned();
                let q: DVector<f64> = theta.rows(nq, nq).into_owned();
                let u: DVector<f64> = theta.rows(2 * nq, stage.nu).into_owned();
                step_linearized(stage, &q_prev, &q, &u, None, None, &settings)?;
            }
        }
        Ok(start.elapsed().as_secs_f64())
    };
    let condensed_seconds = time(false)?;
    let dense_seconds = time(true)?;
    Ok(SolverBenchmark {
        solves: repetitions * policy.stages.len(),
        condensed_seconds,
        dense_seconds,
        ratio: if condensed_seconds > 0.0 { dense_seconds / condensed_seconds } else { 0.0 },
    })
}
