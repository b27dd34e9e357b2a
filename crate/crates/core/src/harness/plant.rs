//! Closed loop on the deterministic expected-dynamics plant: the controller
//! measures the fluid state itself, so predictions are exact.

use crate::bathtub::GateControls;
use crate::controller::{average_levels, next_grid_time, CostWeights, MpcController, MpcInvocation, Trigger};
use crate::error::Result;
use crate::fluid::FluidState;
use crate::scenario::Scenario;

/// Applied control trajectory of a deterministic closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantRun {
    /// `(segment start, levels)`; levels hold until the next segment.
    pub controls: Vec<(f64, GateControls)>,
    pub invocations: Vec<MpcInvocation>,
    /// Vehicle-hours in the system over the run.
    pub delay: f64,
}

impl PlantRun {
    /// Levels applied at time `t`.
    pub fn levels_at(&self, t: f64) -> GateControls {
        let i = self.controls.partition_point(|(s, _)| *s <= t);
        self.controls[i.saturating_sub(1)].1
    }

    /// Levels sampled every `step` hours over `[0, t_end)`.
    pub fn sampled(&self, step: f64, t_end: f64) -> Vec<GateControls> {
        let n = (t_end / step - 1e-9).ceil() as usize;
        (0..n).map(|k| self.levels_at(k as f64 * step)).collect()
    }
}

/// Runs the MPC in closed loop with the fluid model as plant over the
/// scenario horizon. Plant steps follow the prediction grid, with the same
/// time-averaged levels the prediction uses, so solves at grid times see
/// exactly the predicted state. Periodic solve intervals must be multiples
/// of the prediction step.
pub fn run_fluid_closed_loop(scenario: &Scenario, weights: CostWeights, trigger: Trigger) -> Result<PlantRun> {
    let model = scenario.fluid_model(scenario.demand.clone());
    let t_end = scenario.horizon();
    let mut mpc = MpcController::new(
        model.clone(),
        weights,
        scenario.base_policy(),
        trigger,
        scenario.prediction_horizon(),
        t_end,
    );
    let mut plant = FluidState::empty(0.0);
    let mut controls = Vec::new();
    let eps = 1e-9 * model.dt;
    while plant.t < t_end - eps {
        let t = plant.t;
        mpc.control(t, false, || plant.clone());
        let next = next_grid_time(&model, t).min(t_end);
        let levels = average_levels(mpc.policy(), t, next);
        if controls.last().is_none_or(|(_, l)| *l != levels) {
            controls.push((t, levels));
        }
        plant.step(&model, levels, next - t)?;
        plant.t = next;
    }
    Ok(PlantRun {
        controls,
        invocations: mpc.log().to_vec(),
        delay: plant.delay,
    })
}
