//! Deterministic cost of a gate schedule on the expected dynamics.

use crate::bathtub::{Gate, GateControls};
use crate::controller::{CostWeights, Schedule};
use crate::fluid::{FluidModel, FluidState};
use crate::network::Reservoir;

/// End of the prediction step that contains `t` on the absolute grid.
pub fn next_grid_time(model: &FluidModel, t: f64) -> f64 {
    ((t / model.dt + 1e-7).floor() + 1.0) * model.dt
}

/// One sample of a predicted trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutSample {
    pub t: f64,
    pub n_a: f64,
    pub n_b: f64,
    pub queue: f64,
    pub u_ba: f64,
    pub lambda: f64,
}

/// Predicted cost and trajectory of a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// Objective value; `+inf` if the prediction hit gridlock.
    pub j: f64,
    /// `integral (N_A + N_B + Q) dt` (veh h).
    pub delay_integral: f64,
    /// `c_T * delay` with the delay in vehicle-minutes.
    pub delay_term: f64,
    /// `c_S * m_T`.
    pub safety_term: f64,
    /// `theta * var_T`.
    pub risk_term: f64,
    pub m_t: f64,
    pub var_t: f64,
    pub trajectory: Vec<RolloutSample>,
    pub gridlock: bool,
}

impl RolloutResult {
    /// Sum of the three stored terms.
    pub fn recomposed(&self) -> f64 {
        self.delay_term + self.safety_term + self.risk_term
    }
}

/// Piecewise-constant schedule on a regular grid starting at `t0`; the last
/// level is held after the grid ends.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseSchedule {
    pub t0: f64,
    pub interval: f64,
    pub levels: Vec<GateControls>,
}

impl PiecewiseSchedule {
    fn slot(&self, t: f64) -> usize {
        let k = ((t - self.t0) / self.interval + 1e-9).floor();
        (k.max(0.0) as usize).min(self.levels.len() - 1)
    }
}

impl Schedule for PiecewiseSchedule {
    fn levels(&self, t: f64) -> GateControls {
        self.levels[self.slot(t)]
    }

    fn next_switch(&self, t: f64) -> Option<f64> {
        let k = self.slot(t);
        (k + 1..self.levels.len())
            .find(|&j| self.levels[j] != self.levels[k])
            .map(|j| self.t0 + j as f64 * self.interval)
    }
}

/// Time-averaged levels of `schedule` over `[t0, t1)`.
pub fn average_levels(schedule: &dyn Schedule, t0: f64, t1: f64) -> GateControls {
    let first = schedule.levels(t0);
    if schedule.next_switch(t0).is_none_or(|sw| sw >= t1) {
        return first;
    }
    let mut acc = [0.0; 2];
    let mut t = t0;
    loop {
        let lv = schedule.levels(t);
        let end = schedule.next_switch(t).map_or(t1, |sw| sw.min(t1));
        for g in 0..2 {
            acc[g] += lv[g] * (end - t);
        }
        if end >= t1 {
            break;
        }
        t = end;
    }
    acc.map(|a| a / (t1 - t0))
}

/// Rolls the expected dynamics forward from `init` to `t_end` under
/// `schedule` and evaluates `J = c_T * delay + c_S * m_T + theta * var_T`.
/// Steps lie on the absolute grid of the model's step, independent of the
/// schedule; a step containing a switch applies the time-averaged level.
pub fn rollout_cost(
    model: &FluidModel,
    init: &FluidState,
    schedule: &dyn Schedule,
    t_end: f64,
    weights: &CostWeights,
) -> RolloutResult {
    let mut s = init.clone();
    s.reset_accumulators();
    let mut trajectory = Vec::new();
    let mut gridlock = false;
    let eps = 1e-9 * model.dt;
    while s.t < t_end - eps {
        let next = next_grid_time(model, s.t).min(t_end);
        let levels = average_levels(schedule, s.t, next);
        match s.step(model, levels, next - s.t) {
            Ok(step) => {
                s.t = next;
                trajectory.push(RolloutSample {
                    t: s.t,
                    n_a: s.occupancy(Reservoir::A),
                    n_b: s.occupancy(Reservoir::B),
                    queue: s.queue(Gate::AB) + s.queue(Gate::BA),
                    u_ba: step.u[Gate::BA.index()],
                    lambda: step.intensities[0] + step.intensities[1],
                });
            }
            Err(_) => {
                gridlock = true;
                break;
            }
        }
    }
    let delay_term = weights.c_t * s.delay * 60.0;
    let safety_term = weights.c_s * s.moments.m;
    let risk_term = weights.theta * s.moments.variance();
    let j = if gridlock {
        f64::INFINITY
    } else {
        delay_term + safety_term + risk_term
    };
    RolloutResult {
        j,
        delay_integral: s.delay,
        delay_term,
        safety_term,
        risk_term,
        m_t: s.moments.m,
        var_t: s.moments.variance(),
        trajectory,
        gridlock,
    }
}
