use serde::{Deserialize, Serialize};

use super::scenario::GaitSpec;
use crate::model::ModelSpec;
use crate::mpc::EpisodeRecord;

/// Summary statistics of one episode. Computed from the record alone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ticks: usize,
    /// Touchdowns of all gait groups after the minimum-interval filter.
    pub steps: usize,
    pub steps_per_group: Vec<usize>,
    /// Ticks of the counted touchdowns.
    pub step_ticks: Vec<usize>,
    /// RMS of `‖q − q̄‖` over all recorded ticks.
    pub configuration_rmse: f64,
    /// RMS of the base position error, or of the full error for fixed-base
    /// systems.
    pub base_rmse: f64,
    /// Base position RMS error over the last `period` ticks.
    pub final_base_error: f64,
    /// Largest absolute configuration error.
    pub max_tracking_error: f64,
    pub fell: bool,
    pub failure: Option<String>,
    pub max_penetration: f64,
    pub max_complementarity: f64,
    /// Ticks whose optimization failed and reused the previous control.
    pub solver_failures: usize,
    /// Total normal impulse per contact.
    pub impulse_totals: Vec<f64>,
    /// First tick at which each contact carried a tenth of the body weight.
    pub first_load: Vec<Option<usize>>,
    pub timing: TimingStats,
}

/// Policy evaluation wall times in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub samples: usize,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl TimingStats {
    /// Nearest-rank percentiles. No samples gives all zeros.
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return TimingStats::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let rank = |p: f64| sorted[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
        TimingStats {
            samples: n,
            mean: sorted.iter().sum::<f64>() / n as f64,
            p50: rank(0.5),
            p90: rank(0.9),
            p99: rank(0.99),
            max: sorted[n - 1],
        }
    }
}

/// Group touchdowns with the minimum-interval filter, returned as
/// `(tick, group)` in time order.
pub fn count_steps(record: &EpisodeRecord, gait: &GaitSpec) -> Vec<(usize, usize)> {
    let min_ticks = (gait.min_interval / record.timestep).round() as usize;
    let mut last: Vec<Option<usize>> = vec![None; gait.groups.len()];
    let mut touchdowns = record.touchdowns.clone();
    touchdowns.sort();
    let mut out = Vec::new();
    for (tick, contact) in touchdowns {
        for (g, group) in gait.groups.iter().enumerate() {
            if !group.contains(&contact) {
                continue;
            }
            if last[g].is_none_or(|prev| tick >= prev + min_ticks) {
                out.push((tick, g));
                last[g] = Some(tick);
            }
        }
    }
    out
}

impl Metrics {
    /// `period` is the length of the final window for `final_base_error`.
    pub fn compute(model: &ModelSpec, record: &EpisodeRecord, gait: &GaitSpec, period: usize) -> Self {
        let steps = count_steps(record, gait);
        let mut steps_per_group = vec![0; gait.groups.len()];
        for &(_, g) in &steps {
            steps_per_group[g] += 1;
        }

        let base: Vec<usize> = match model.base {
            Some([ix, iz]) => vec![ix, iz],
            None => (0..model.nq).collect(),
        };
        let mut sq = 0.0;
        let mut base_sq = Vec::with_capacity(record.configurations.len());
        let mut max_err: f64 = 0.0;
        for (q, r) in record.configurations.iter().zip(&record.targets) {
            let err: Vec<f64> = q.iter().zip(r).map(|(a, b)| a - b).collect();
            sq += err.iter().map(|e| e * e).sum::<f64>();
            base_sq.push(base.iter().map(|&j| err[j] * err[j]).sum::<f64>());
            max_err = err.iter().fold(max_err, |m, e| m.max(e.abs()));
        }
        let count = record.configurations.len().max(1) as f64;
        let tail = period.clamp(1, base_sq.len().max(1));
        let final_sq = &base_sq[base_sq.len().saturating_sub(tail)..];

        let c = model.num_contacts();
        let threshold = 0.1 * model.total_mass() * model.gravity * record.timestep;
        let mut impulse_totals = vec![0.0; c];
        let mut first_load = vec![None; c];
        for (t, impulses) in record.impulses.iter().enumerate() {
            for i in 0..c {
                impulse_totals[i] += impulses[i];
                if first_load[i].is_none() && impulses[i] > threshold {
                    first_load[i] = Some(t + 1);
                }
            }
        }

        Metrics {
            ticks: record.ticks(),
            steps: steps.len(),
            steps_per_group,
            step_ticks: steps.iter().map(|&(t, _)| t).collect(),
            configuration_rmse: (sq / count).sqrt(),
            base_rmse: (base_sq.iter().sum::<f64>() / count).sqrt(),
            final_base_error: (final_sq.iter().sum::<f64>() / final_sq.len().max(1) as f64).sqrt(),
            max_tracking_error: max_err,
            fell: record.fell,
            failure: record.failure.clone(),
            max_penetration: record.max_penetration,
            max_complementarity: record.max_complementarity,
            solver_failures: record.solves.iter().filter(|s| s.failed).count(),
            impulse_totals,
            first_load,
            timing: TimingStats::from_samples(&record.timings),
        }
    }
}
