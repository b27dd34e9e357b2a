//! Parallel Monte-Carlo batches and their aggregation.

use rayon::prelude::*;
use statrs::statistics::Statistics;

use crate::controller::PolicyKind;
use crate::error::{Error, Result};
use crate::harness::run::{Experiment, RunResult};
use crate::scenario::Scenario;

/// Largest tolerated share of failed runs in a batch.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

/// Sample mean and standard error (`std / sqrt(n)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat { mean: f64::NAN, se: f64::NAN };
        }
        let mean = values.mean();
        let se = if n > 1 { values.std_dev() / (n as f64).sqrt() } else { 0.0 };
        Stat { mean, se }
    }

    /// Relative change `(self - baseline) / baseline` in percent.
    pub fn pct_change(&self, baseline: &Stat) -> f64 {
        100.0 * (self.mean - baseline.mean) / baseline.mean
    }

    /// Whether `self` lies below `other` by more than `k` combined standard errors.
    pub fn below(&self, other: &Stat, k: f64) -> bool {
        self.mean + k * self.se.hypot(other.se) < other.mean
    }
}

/// Scalar metrics aggregated over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub n_runs: usize,
    pub n_failed: usize,
    pub mean_travel_time: Stat,
    pub objective_per_vehicle: Stat,
    pub accidents_total: Stat,
    pub accidents_a: Stat,
    pub accidents_b: Stat,
    pub unfinished: Stat,
    pub invocations: Stat,
    pub switches: Stat,
    /// Mean B to A transfer flow per bin over the runs.
    pub mean_flow: Vec<(f64, f64)>,
}

/// Names and accessors of the aggregated scalars, in report order.
pub const METRICS: [&str; 8] = [
    "mean_travel_time",
    "objective_per_vehicle",
    "accidents_total",
    "accidents_a",
    "accidents_b",
    "unfinished",
    "invocations",
    "switches",
];

impl Aggregate {
    pub fn from_runs(runs: &[RunResult], n_failed: usize) -> Aggregate {
        let col = |f: &dyn Fn(&RunResult) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>());
        let mean_flow = match runs.first() {
            None => Vec::new(),
            Some(first) => (0..first.flow_series.len())
                .map(|i| {
                    let total: f64 = runs.iter().map(|r| r.flow_series[i].1).sum();
                    (first.flow_series[i].0, total / runs.len() as f64)
                })
                .collect(),
        };
        Aggregate {
            n_runs: runs.len(),
            n_failed,
            mean_travel_time: col(&|r| r.mean_travel_time),
            objective_per_vehicle: col(&|r| r.objective_per_vehicle),
            accidents_total: col(&|r| r.accidents_total as f64),
            accidents_a: col(&|r| r.accidents_by_reservoir[0] as f64),
            accidents_b: col(&|r| r.accidents_by_reservoir[1] as f64),
            unfinished: col(&|r| r.unfinished as f64),
            invocations: col(&|r| r.invocations as f64),
            switches: col(&|r| r.switch_times.len() as f64),
            mean_flow,
        }
    }

    /// Metric by its name in [`METRICS`].
    pub fn metric(&self, name: &str) -> Option<Stat> {
        Some(match name {
            "mean_travel_time" => self.mean_travel_time,
            "objective_per_vehicle" => self.objective_per_vehicle,
            "accidents_total" => self.accidents_total,
            "accidents_a" => self.accidents_a,
            "accidents_b" => self.accidents_b,
            "unfinished" => self.unfinished,
            "invocations" => self.invocations,
            "switches" => self.switches,
            _ => return None,
        })
    }

    /// Percent change of every metric against `baseline`.
    pub fn pct_change_vs(&self, baseline: &Aggregate) -> Vec<(&'static str, f64)> {
        METRICS
            .iter()
            .map(|&m| (m, self.metric(m).unwrap().pct_change(&baseline.metric(m).unwrap())))
            .collect()
    }
}

/// Results of a batch: the successful runs in seed order and the aggregate.
#[derive(Debug, Clone)]
pub struct Batch {
    pub runs: Vec<RunResult>,
    pub aggregate: Aggregate,
}

impl Batch {
    /// Aggregate with every objective recomputed under the safety weight `c_s`.
    pub fn rescored(&self, c_s: f64) -> Aggregate {
        let runs: Vec<RunResult> = self.runs.iter().map(|r| r.rescored(c_s)).collect();
        Aggregate::from_runs(&runs, self.aggregate.n_failed)
    }
}

/// Runs seeds `base_seed .. base_seed + n_runs` in parallel. Failed runs are
/// excluded with a warning; more than [`MAX_FAILURE_SHARE`] failures abort.
pub fn run_batch(exp: &Experiment, n_runs: usize, base_seed: u64) -> Result<Batch> {
    if n_runs == 0 {
        return Err(Error::Domain {
            what: "n_runs",
            value: 0.0,
            constraint: "at least one run is required",
        });
    }
    let outcomes: Vec<Result<RunResult>> = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| exp.run(base_seed.wrapping_add(i)))
        .collect();
    let mut runs = Vec::with_capacity(n_runs);
    let mut failed = 0;
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => runs.push(r),
            Err(e) => {
                log::warn!("run with seed {} failed: {e}", base_seed.wrapping_add(i as u64));
                failed += 1;
            }
        }
    }
    if failed as f64 > MAX_FAILURE_SHARE * n_runs as f64 {
        return Err(Error::TooManyFailures { failed, total: n_runs });
    }
    if failed > 0 {
        log::warn!("{failed} of {n_runs} runs failed and were excluded");
    }
    let aggregate = Aggregate::from_runs(&runs, failed);
    Ok(Batch { runs, aggregate })
}

/// Monte-Carlo batch of `scenario` under `policy` with the scenario's weights.
pub fn run_monte_carlo(scenario: &Scenario, policy: PolicyKind, n_runs: usize, base_seed: u64) -> Result<Aggregate> {
    let exp = Experiment::new(scenario, policy, scenario.cost_weights())?;
    Ok(run_batch(&exp, n_runs, base_seed)?.aggregate)
}
