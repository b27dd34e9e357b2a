//! Gate control policies: the uncontrolled baseline, analytic steady-state
//! gates, bang-bang threshold policies optimised on the expected dynamics,
//! and the event-triggered receding-horizon loop.

mod mpc;
mod rollout;
mod steady;
mod threshold;

pub use mpc::{MpcController, MpcInvocation, SolveReason, Trigger};
pub use rollout::{average_levels, next_grid_time, rollout_cost, PiecewiseSchedule, RolloutResult, RolloutSample};
pub use steady::{
    risk_adjusted_occupancies, risk_surcharge, solve_marginal_equality, steady_state_gates,
    steady_state_occupancies, Discharge, Greenshields,
};
pub use threshold::{golden_section, optimize_threshold, ThresholdSearch};

use serde::{Deserialize, Serialize};

use crate::bathtub::{Gate, GateControls};

/// Relative improvement a candidate must achieve to replace an incumbent.
pub const STRICT_IMPROVEMENT: f64 = 1e-12;

/// Weights of the mean-variance objective.
///
/// The delay term is measured in vehicle-minutes, so `c_t = 1` prices one
/// vehicle-minute at one unit and `c_s` is the number of vehicle-minutes one
/// expected accident is worth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub c_t: f64,
    pub c_s: f64,
    pub theta: f64,
    /// Accepted extra minutes per vehicle per accident avoided, when `c_s`
    /// was derived from it.
    pub lambda_tradeoff: Option<f64>,
}

impl CostWeights {
    pub fn new(c_t: f64, c_s: f64, theta: f64) -> Self {
        CostWeights {
            c_t,
            c_s,
            theta,
            lambda_tradeoff: None,
        }
    }

    /// `c_s = lambda_tradeoff * total_vehicles`.
    pub fn from_tradeoff(c_t: f64, lambda_tradeoff: f64, theta: f64, total_vehicles: f64) -> Self {
        CostWeights {
            c_t,
            c_s: lambda_tradeoff * total_vehicles,
            theta,
            lambda_tradeoff: Some(lambda_tradeoff),
        }
    }

    /// Delay-only weights.
    pub fn delay_only() -> Self {
        Self::new(1.0, 0.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    NoControl,
    SteadyState,
    Threshold,
}

/// How a threshold policy uses its switching time `t*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Gated gates are open on `[0, t*)` and closed afterwards.
    OpenUntil,
    /// Gated gates are closed on `[0, t*)` and open afterwards.
    ClosedUntil,
}

impl ThresholdMode {
    /// Mode whose first phase keeps the given signal.
    pub fn keeping(open: bool) -> Self {
        if open {
            ThresholdMode::OpenUntil
        } else {
            ThresholdMode::ClosedUntil
        }
    }
}

/// A control trajectory for `(u_AB, u_BA)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatePolicy {
    pub kind: PolicyKind,
    pub mode: ThresholdMode,
    /// Switching time (h).
    pub t_star: f64,
    /// `(u_min, u_max)` per gate (veh/h), indexed by [`Gate::index`].
    pub u_levels: [(f64, f64); 2],
    /// Gates driven by the threshold; the others stay at `u_max`.
    pub gated: [bool; 2],
    /// Constant flows of the steady-state policy (veh/h).
    pub steady: [f64; 2],
}

impl GatePolicy {
    pub fn no_control(u_levels: [(f64, f64); 2]) -> Self {
        GatePolicy {
            kind: PolicyKind::NoControl,
            mode: ThresholdMode::OpenUntil,
            t_star: 0.0,
            u_levels,
            gated: [false; 2],
            steady: [0.0; 2],
        }
    }

    pub fn threshold(u_levels: [(f64, f64); 2], gated: [bool; 2], mode: ThresholdMode, t_star: f64) -> Self {
        GatePolicy {
            kind: PolicyKind::Threshold,
            mode,
            t_star,
            u_levels,
            gated,
            steady: [0.0; 2],
        }
    }

    pub fn steady_state(u_levels: [(f64, f64); 2], flows: [f64; 2]) -> Self {
        GatePolicy {
            kind: PolicyKind::SteadyState,
            mode: ThresholdMode::OpenUntil,
            t_star: 0.0,
            u_levels,
            gated: [false; 2],
            steady: flows,
        }
    }

    /// Same levels and gated set, new threshold.
    pub fn with_threshold(&self, mode: ThresholdMode, t_star: f64) -> Self {
        GatePolicy::threshold(self.u_levels, self.gated, mode, t_star)
    }

    /// Whether the threshold signal is "open" at time `t`.
    pub fn signal_open(&self, t: f64) -> bool {
        match self.kind {
            PolicyKind::Threshold => match self.mode {
                ThresholdMode::OpenUntil => t < self.t_star,
                ThresholdMode::ClosedUntil => t >= self.t_star,
            },
            _ => true,
        }
    }

    /// Whether `gate` is held at `u_max` at time `t`.
    pub fn is_open(&self, gate: Gate, t: f64) -> bool {
        !self.gated[gate.index()] || self.signal_open(t)
    }
}

/// A time-varying requested gate level, right-continuous in time.
pub trait Schedule {
    /// Requested levels (veh/h) at time `t`.
    fn levels(&self, t: f64) -> GateControls;
    /// First time strictly after `t` at which the levels change.
    fn next_switch(&self, t: f64) -> Option<f64>;
}

impl Schedule for GatePolicy {
    fn levels(&self, t: f64) -> GateControls {
        Gate::ALL.map(|g| {
            let (lo, hi) = self.u_levels[g.index()];
            match self.kind {
                PolicyKind::NoControl => hi,
                PolicyKind::SteadyState => self.steady[g.index()].clamp(lo, hi),
                PolicyKind::Threshold => {
                    if self.is_open(g, t) {
                        hi
                    } else {
                        lo
                    }
                }
            }
        })
    }

    fn next_switch(&self, t: f64) -> Option<f64> {
        (self.kind == PolicyKind::Threshold && self.gated.iter().any(|&g| g) && self.t_star > t)
            .then_some(self.t_star)
    }
}
