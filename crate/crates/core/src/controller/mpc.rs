//! Receding-horizon loop that re-optimises the threshold policy only when an
//! accident changes the information state, with a periodic variant for
//! comparison.

use crate::bathtub::{Gate, GateControls};
use crate::controller::{
    optimize_threshold, rollout_cost, CostWeights, GatePolicy, Schedule, ThresholdMode, ThresholdSearch,
};
use crate::controller::threshold::improves;
use crate::fluid::{FluidModel, FluidState};

/// Minimum relative gain for a periodic re-solve without new information to
/// replace the cached plan. Absorbs the search's one-second resolution so
/// that an unchanged forecast reproduces the cached plan.
pub const PERIODIC_HYSTERESIS: f64 = 1e-6;

/// When the optimiser is invoked besides `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trigger {
    /// At every accident.
    Event,
    /// Every `interval` hours (and not at accidents).
    Periodic { interval: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveReason {
    Initial,
    Accident,
    Periodic,
}

/// Log entry of one optimiser invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcInvocation {
    pub t: f64,
    pub reason: SolveReason,
    pub mode: ThresholdMode,
    pub t_star: f64,
    pub cost: f64,
    pub evaluations: usize,
    /// Whether the new plan replaced the cached one.
    pub adopted: bool,
}

/// Event-triggered bang-bang MPC.
///
/// Each solve chooses a single switching time from the current gate signal:
/// keep the present signal until `t*`, then flip. Between solves the cached
/// plan is applied, so every inter-solve interval contains at most one switch.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub model: FluidModel,
    pub weights: CostWeights,
    pub trigger: Trigger,
    /// Prediction horizon (h).
    pub horizon: f64,
    /// End of the control problem (h).
    pub t_end: f64,
    policy: GatePolicy,
    cached_initial: Option<ThresholdSearch>,
    next_periodic: f64,
    last_signal: Option<bool>,
    switches: u32,
    log: Vec<MpcInvocation>,
    trace: Vec<(f64, f64, f64)>,
    record_trace: bool,
}

impl MpcController {
    /// `base` carries the gate levels, the gated set and the initial mode.
    pub fn new(
        model: FluidModel,
        weights: CostWeights,
        base: GatePolicy,
        trigger: Trigger,
        horizon: f64,
        t_end: f64,
    ) -> Self {
        MpcController {
            model,
            weights,
            trigger,
            horizon,
            t_end,
            policy: base,
            cached_initial: None,
            next_periodic: 0.0,
            last_signal: None,
            switches: 0,
            log: Vec::new(),
            trace: Vec::new(),
            record_trace: false,
        }
    }

    /// Uses a precomputed `t = 0` solution instead of solving again.
    pub fn with_initial_solution(mut self, solution: ThresholdSearch) -> Self {
        self.cached_initial = Some(solution);
        self
    }

    /// Keeps every evaluated `(solve time, t*, J)` triple.
    pub fn with_trace(mut self) -> Self {
        self.record_trace = true;
        self
    }

    /// Solves the initial problem from an empty network at `t = 0`.
    pub fn initial_solution(
        model: &FluidModel,
        weights: &CostWeights,
        base: &GatePolicy,
        horizon: f64,
        t_end: f64,
    ) -> ThresholdSearch {
        best_of_both_modes(model, &FluidState::empty(0.0), weights, base, horizon, t_end)
    }

    pub fn policy(&self) -> &GatePolicy {
        &self.policy
    }

    pub fn invocations(&self) -> usize {
        self.log.len()
    }

    pub fn switches(&self) -> u32 {
        self.switches
    }

    pub fn log(&self) -> &[MpcInvocation] {
        &self.log
    }

    pub fn trace(&self) -> &[(f64, f64, f64)] {
        &self.trace
    }

    /// Requested gate levels for the step starting at `t`. `accident` reports
    /// an accident during the previous step; `measure` yields the measured
    /// state and is only called when a solve is due.
    pub fn control(&mut self, t: f64, accident: bool, measure: impl FnOnce() -> FluidState) -> GateControls {
        let reason = if self.log.is_empty() {
            Some(SolveReason::Initial)
        } else {
            match self.trigger {
                Trigger::Event if accident => Some(SolveReason::Accident),
                Trigger::Periodic { .. } if t >= self.next_periodic - 1e-9 => Some(SolveReason::Periodic),
                _ => None,
            }
        };
        if let Some(reason) = reason {
            if let Trigger::Periodic { interval } = self.trigger {
                while self.next_periodic <= t + 1e-9 {
                    self.next_periodic += interval;
                }
            }
            self.solve(t, reason, measure);
        }

        let signal = self.policy.signal_open(t);
        if let Some(prev) = self.last_signal {
            if prev != signal && self.policy.gated.iter().any(|&g| g) {
                self.switches += 1;
            }
        }
        self.last_signal = Some(signal);
        self.policy.levels(t)
    }

    fn solve(&mut self, t: f64, reason: SolveReason, measure: impl FnOnce() -> FluidState) {
        if reason == SolveReason::Initial {
            if let Some(sol) = self.cached_initial.take() {
                self.adopt(t, reason, sol, true);
                return;
            }
        }
        let mut init = measure();
        init.t = t;
        let t_h = (t + self.horizon).min(self.t_end);
        let sol = if reason == SolveReason::Initial {
            best_of_both_modes(&self.model, &init, &self.weights, &self.policy, self.horizon, self.t_end)
        } else {
            let mode = ThresholdMode::keeping(self.policy.signal_open(t));
            search(&self.model, &init, &self.weights, &self.policy, mode, t_h, self.t_end)
        };

        let adopted = if reason == SolveReason::Periodic {
            let cached = rollout_cost(&self.model, &init, &self.policy, t_h, &self.weights);
            sol.result.j < cached.j - PERIODIC_HYSTERESIS * cached.j.abs()
        } else {
            true
        };
        self.adopt(t, reason, sol, adopted);
    }

    fn adopt(&mut self, t: f64, reason: SolveReason, sol: ThresholdSearch, adopted: bool) {
        if self.record_trace {
            self.trace.extend(sol.trace.iter().map(|&(ts, j)| (t, ts, j)));
        }
        self.log.push(MpcInvocation {
            t,
            reason,
            mode: sol.policy.mode,
            t_star: sol.policy.t_star,
            cost: sol.result.j,
            evaluations: sol.evaluations,
            adopted,
        });
        if adopted {
            self.policy = sol.policy;
        }
    }

    /// Whether the signal of `gate` is at `u_max` at time `t`.
    pub fn is_open(&self, gate: Gate, t: f64) -> bool {
        self.policy.is_open(gate, t)
    }
}

/// Threshold search over `[init.t, t_h]` in one mode. An open-until plan that
/// stays open through a horizon shorter than the run is kept open.
fn search(
    model: &FluidModel,
    init: &FluidState,
    weights: &CostWeights,
    base: &GatePolicy,
    mode: ThresholdMode,
    t_h: f64,
    t_end: f64,
) -> ThresholdSearch {
    let mut sol = optimize_threshold(model, init, weights, base, mode, t_h);
    if mode == ThresholdMode::OpenUntil && t_h < t_end && sol.policy.t_star >= t_h - 1e-12 {
        sol.policy.t_star = t_end;
    }
    sol
}

/// Best single-switch plan in either direction. The mode of `base` is kept
/// unless the other direction is strictly better, so that later re-solves,
/// which continue from the current signal, cannot improve on an undisturbed
/// plan.
fn best_of_both_modes(
    model: &FluidModel,
    init: &FluidState,
    weights: &CostWeights,
    base: &GatePolicy,
    horizon: f64,
    t_end: f64,
) -> ThresholdSearch {
    let t_h = (init.t + horizon).min(t_end);
    let preferred = search(model, init, weights, base, base.mode, t_h, t_end);
    if !base.gated.iter().any(|&g| g) {
        return preferred;
    }
    let other = match base.mode {
        ThresholdMode::OpenUntil => ThresholdMode::ClosedUntil,
        ThresholdMode::ClosedUntil => ThresholdMode::OpenUntil,
    };
    let alternative = search(model, init, weights, base, other, t_h, t_end);
    let (mut chosen, rest) = if improves(alternative.result.j, preferred.result.j) {
        (alternative, preferred)
    } else {
        (preferred, alternative)
    };
    chosen.evaluations += rest.evaluations;
    chosen.trace.extend(rest.trace);
    chosen
}
