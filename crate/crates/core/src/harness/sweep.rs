//! The experiment matrix: accident-rate variants times trade-off weights,
//! each against an uncontrolled baseline, plus the risk-aversion frontier.

use rayon::prelude::*;

use crate::controller::{MpcController, PolicyKind};
use crate::error::Result;
use crate::harness::mc::{run_batch, Aggregate, Batch};
use crate::harness::run::Experiment;
use crate::scenario::Scenario;

/// Accident-rate variant of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RateVariant {
    Base,
    High,
}

impl RateVariant {
    pub fn name(self) -> &'static str {
        match self {
            RateVariant::Base => "base",
            RateVariant::High => "high",
        }
    }

    pub fn apply(self, scenario: &Scenario) -> Scenario {
        match self {
            RateVariant::Base => scenario.clone(),
            RateVariant::High => scenario.high_rate(),
        }
    }
}

/// One controlled cell of the matrix.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub rate: RateVariant,
    pub lambda_tradeoff: f64,
    /// Optimal threshold at `t = 0` (h).
    pub initial_t_star: Option<f64>,
    pub batch: Batch,
    /// Uncontrolled baseline scored with this cell's weights.
    pub baseline: Aggregate,
}

/// Predicted accident statistics of the optimal plan at `t = 0` for one
/// risk-aversion level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierPoint {
    pub theta: f64,
    pub t_star: f64,
    pub cost: f64,
    pub mean_accidents: f64,
    pub std_accidents: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub baselines: Vec<(RateVariant, Batch)>,
    pub cells: Vec<SweepCell>,
    pub frontier: Vec<FrontierPoint>,
}

impl SweepResult {
    /// Uncontrolled baseline of `rate`, objective scored without safety weight.
    pub fn baseline(&self, rate: RateVariant) -> &Aggregate {
        &self
            .baselines
            .iter()
            .find(|(r, _)| *r == rate)
            .expect("baseline of every swept rate")
            .1
            .aggregate
    }
}

/// Risk-aversion frontier: for each `theta` the predicted mean and standard
/// deviation of the accident count under the optimal initial plan.
pub fn theta_frontier(scenario: &Scenario, thetas: &[f64]) -> Vec<FrontierPoint> {
    let model = scenario.fluid_model(scenario.demand.clone());
    let base = scenario.base_policy();
    thetas
        .par_iter()
        .map(|&theta| {
            let weights = scenario.cost_weights_for(scenario.weights.lambda_tradeoff, theta);
            let sol = MpcController::initial_solution(
                &model,
                &weights,
                &base,
                scenario.prediction_horizon(),
                scenario.horizon(),
            );
            FrontierPoint {
                theta,
                t_star: sol.policy.t_star,
                cost: sol.result.j,
                mean_accidents: sol.result.m_t,
                std_accidents: sol.result.var_t.max(0.0).sqrt(),
            }
        })
        .collect()
}

/// Runs the full matrix with `n_runs` seeds per cell, all cells sharing the
/// same seeds.
pub fn sweep(
    scenario: &Scenario,
    lambdas: &[f64],
    thetas: &[f64],
    rates: &[RateVariant],
    n_runs: usize,
    base_seed: u64,
) -> Result<SweepResult> {
    let mut baselines = Vec::new();
    let mut cells = Vec::new();
    for &rate in rates {
        let sc = rate.apply(scenario);
        let baseline = Experiment::new(&sc, PolicyKind::NoControl, sc.cost_weights_for(0.0, 0.0))?;
        let baseline = run_batch(&baseline, n_runs, base_seed)?;
        for &lambda in lambdas {
            let weights = sc.cost_weights_for(lambda, sc.weights.theta);
            let exp = Experiment::new(&sc, PolicyKind::Threshold, weights)?;
            let initial_t_star = exp.initial_solution().map(|s| s.policy.t_star);
            log::info!(
                "{} rate, trade-off {lambda:.4}: initial t* = {:?} h",
                rate.name(),
                initial_t_star
            );
            cells.push(SweepCell {
                rate,
                lambda_tradeoff: lambda,
                initial_t_star,
                batch: run_batch(&exp, n_runs, base_seed)?,
                baseline: baseline.rescored(weights.c_s),
            });
        }
        baselines.push((rate, baseline));
    }
    let frontier = theta_frontier(scenario, thetas);
    Ok(SweepResult {
        baselines,
        cells,
        frontier,
    })
}
