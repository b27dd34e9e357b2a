//! One seeded stochastic simulation run under a chosen policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::accidents::intensity;
use crate::bathtub::{Gate, GateControls, SystemState};
use crate::controller::{
    risk_adjusted_occupancies, steady_state_gates, CostWeights, GatePolicy, MpcController, PolicyKind, Schedule,
    ThresholdSearch,
};
use crate::demand::{ArrivalGenerator, DemandModel};
use crate::error::Result;
use crate::fluid::{FluidModel, FluidState};
use crate::network::Reservoir;
use crate::scenario::Scenario;

/// RNG stream carrying route choices and trip lengths.
pub const TRIP_STREAM: u64 = 0;
/// RNG stream carrying the accident draws.
pub const ACCIDENT_STREAM: u64 = 1;
/// RNG stream carrying the controller's forecast error.
pub const FORECAST_STREAM: u64 = 2;

/// Width of the bins of the transfer-flow series (h).
pub const FLOW_BIN: f64 = 1.0 / 60.0;

/// One accident of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccidentRecord {
    pub t: f64,
    pub reservoir: Reservoir,
    /// Intensity of the step in which it occurred (1/h).
    pub lambda: f64,
    /// Degradation factor right after the event.
    pub chi_after: f64,
}

/// Per-step sample of the system trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSample {
    /// Step start (h).
    pub t: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub v_a: f64,
    pub v_b: f64,
    /// Vehicles released B to A during the step.
    pub transfer_ba: u32,
    pub transfer_ab: u32,
    pub queue_ba: usize,
    pub queue_ab: usize,
    pub completions: u32,
}

/// Scalar metrics and series of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    /// Mean in-system time per entered vehicle (min); unfinished vehicles
    /// contribute the time accrued until the horizon end.
    pub mean_travel_time: f64,
    /// `mean_travel_time + c_S * N_acc / entered` (min per vehicle).
    pub objective_per_vehicle: f64,
    pub accidents_total: u32,
    pub accidents_by_reservoir: [u32; 2],
    pub entered: u64,
    pub completed: u64,
    /// Vehicles still in the system at the horizon end.
    pub unfinished: u64,
    /// Mean B to A transfer flow (veh/h) per bin of [`FLOW_BIN`], keyed by
    /// the bin start (h).
    pub flow_series: Vec<(f64, f64)>,
    /// Times (h) at which the gated signal changed.
    pub switch_times: Vec<f64>,
    pub invocations: usize,
    /// Steps at which `entered = N_A + N_B + queued + completed` failed.
    pub conservation_violations: u64,
    pub accidents: Vec<AccidentRecord>,
    /// Full per-step trajectory when requested.
    pub timeseries: Vec<StepSample>,
}

impl RunResult {
    /// Objective per vehicle under a different safety weight `c_s`.
    pub fn objective_with(&self, c_s: f64) -> f64 {
        if self.entered == 0 {
            return self.mean_travel_time;
        }
        self.mean_travel_time + c_s * self.accidents_total as f64 / self.entered as f64
    }

    /// Copy with the objective recomputed under `c_s`.
    pub fn rescored(&self, c_s: f64) -> RunResult {
        RunResult {
            objective_per_vehicle: self.objective_with(c_s),
            ..self.clone()
        }
    }
}

/// Policy-specific state that is independent of the seed.
#[derive(Debug, Clone)]
enum Prepared {
    NoControl(GatePolicy),
    Steady(GatePolicy),
    Threshold {
        model: FluidModel,
        initial: Option<Box<ThresholdSearch>>,
    },
}

/// A scenario, a policy and a weight set, ready to be run for many seeds.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub scenario: Scenario,
    pub policy: PolicyKind,
    pub weights: CostWeights,
    record_timeseries: bool,
    prepared: Prepared,
}

impl Experiment {
    /// Prepares the policy: steady-state flows are solved once, and the
    /// initial threshold solution is cached when the forecast is exact.
    pub fn new(scenario: &Scenario, policy: PolicyKind, weights: CostWeights) -> Result<Self> {
        let levels = scenario.gate_levels();
        let prepared = match policy {
            PolicyKind::NoControl => Prepared::NoControl(GatePolicy::no_control(levels)),
            PolicyKind::SteadyState => Prepared::Steady(steady_policy(scenario, &weights)?),
            PolicyKind::Threshold => {
                let model = scenario.fluid_model(scenario.demand.clone());
                let initial = (scenario.demand.forecast_error_bound == 0.0).then(|| {
                    Box::new(MpcController::initial_solution(
                        &model,
                        &weights,
                        &scenario.base_policy(),
                        scenario.prediction_horizon(),
                        scenario.horizon(),
                    ))
                });
                Prepared::Threshold { model, initial }
            }
        };
        Ok(Experiment {
            scenario: scenario.clone(),
            policy,
            weights,
            record_timeseries: false,
            prepared,
        })
    }

    /// Keeps the per-step trajectory in every [`RunResult`].
    pub fn with_timeseries(mut self) -> Self {
        self.record_timeseries = true;
        self
    }

    /// Cached optimal threshold at `t = 0`, if any.
    pub fn initial_solution(&self) -> Option<&ThresholdSearch> {
        match &self.prepared {
            Prepared::Threshold { initial, .. } => initial.as_deref(),
            _ => None,
        }
    }

    /// Runs one seed. Fails on gridlock.
    pub fn run(&self, seed: u64) -> Result<RunResult> {
        simulate(self, seed)
    }
}

/// Risk-adjusted steady-state gate flows for the peak inflows of the scenario.
fn steady_policy(scenario: &Scenario, weights: &CostWeights) -> Result<GatePolicy> {
    let d = &scenario.demand;
    let peak = d.profile.iter().map(|p| p.rate_veh_h).fold(0.0, f64::max);
    let (f_a, f_b) = (peak * d.share_a, peak * (1.0 - d.share_a));
    let net = &scenario.reservoirs;
    let n = risk_adjusted_occupancies(f_a, f_b, &net.a, &net.b, weights.c_t, weights.theta)?;
    let flows = steady_state_gates(n, f_a, f_b, [&net.a, &net.b], scenario.gate_capacity());
    Ok(GatePolicy::steady_state(scenario.gate_levels(), flows))
}

/// Seeded generator for one stream of one run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Controller of a running simulation.
enum Control {
    Fixed(GatePolicy),
    Mpc(Box<MpcController>),
}

impl Control {
    fn levels(&mut self, t: f64, accident: bool, state: &SystemState, model: Option<&FluidModel>) -> GateControls {
        match self {
            Control::Fixed(p) => p.levels(t),
            Control::Mpc(mpc) => {
                let model = model.expect("threshold control has a prediction model");
                mpc.control(t, accident, || FluidState::from_system(state, model))
            }
        }
    }

    fn signal_open(&self, t: f64) -> bool {
        match self {
            Control::Fixed(p) => p.signal_open(t),
            Control::Mpc(mpc) => mpc.policy().signal_open(t),
        }
    }
}

fn forecast(scenario: &Scenario, seed: u64) -> DemandModel {
    let eps = scenario.demand.forecast_error_bound;
    if eps == 0.0 {
        return scenario.demand.clone();
    }
    let mut rng = stream_rng(seed, FORECAST_STREAM);
    let offsets: Vec<f64> = scenario
        .demand
        .profile
        .iter()
        .map(|_| rng.random_range(-eps..=eps))
        .collect();
    scenario.demand.perturbed(&offsets)
}

/// Per-step order: controller decision from the state at the step start,
/// arrivals, intensities, movement and gate release, accident sampling.
fn simulate(exp: &Experiment, seed: u64) -> Result<RunResult> {
    let sc = &exp.scenario;
    let net = &sc.reservoirs;
    let dt = sc.dt();
    let steps = sc.steps();
    let horizon = sc.horizon();

    let mut trip_rng = stream_rng(seed, TRIP_STREAM);
    let mut acc_rng = stream_rng(seed, ACCIDENT_STREAM);

    let (mut control, model) = match &exp.prepared {
        Prepared::NoControl(p) | Prepared::Steady(p) => (Control::Fixed(*p), None),
        Prepared::Threshold { model, initial } => {
            let model = if sc.demand.forecast_error_bound == 0.0 {
                model.clone()
            } else {
                sc.fluid_model(forecast(sc, seed))
            };
            let mut mpc = MpcController::new(
                model.clone(),
                exp.weights,
                sc.base_policy(),
                sc.trigger(),
                sc.prediction_horizon(),
                horizon,
            );
            if let Some(sol) = initial {
                mpc = mpc.with_initial_solution((**sol).clone());
            }
            (Control::Mpc(Box::new(mpc)), Some(model))
        }
    };

    let mut state = SystemState::new(net, sc.gate_capacity());
    let mut arrivals = ArrivalGenerator::new();
    let gated = sc.gated().iter().any(|&g| g);

    let n_bins = (horizon / FLOW_BIN - 1e-9).ceil() as usize;
    let mut flow_bins = vec![0.0; n_bins];
    let mut switch_times = Vec::new();
    let mut last_signal = None;
    let mut accident_flag = false;
    let mut violations = 0u64;
    let mut accidents = Vec::new();
    let mut timeseries = Vec::new();

    for k in 0..steps {
        let t = k as f64 * dt;
        state.t = t;
        let step = dt.min(horizon - t);

        let controls = control.levels(t, accident_flag, &state, model.as_ref());
        let signal = control.signal_open(t);
        if gated && last_signal.is_some_and(|prev| prev != signal) {
            switch_times.push(t);
        }
        last_signal = Some(signal);

        let speeds = state.speeds(net)?;
        state.admit(arrivals.arrivals(&sc.demand, t, step, (speeds[0], speeds[1]), &mut trip_rng));

        let speeds = state.speeds(net)?;
        let base = Reservoir::ALL.map(|r| intensity(state.occupancy(r) as f64, 0.0, speeds[0], speeds[1], net.get(r)));

        let report = state.advance(net, controls, step)?;
        let events = state.sample_accidents(net, base, t, step, &mut acc_rng);
        accident_flag = !events.is_empty();
        for (r, te) in events {
            let h = &state.hawkes[r.index()];
            accidents.push(AccidentRecord {
                t: te,
                reservoir: r,
                lambda: h.lambda,
                chi_after: state.degradation(r).factor,
            });
        }

        if !state.is_conserved() {
            violations += 1;
        }
        let ba = report.transfers[Gate::BA.index()];
        let bin = ((t / FLOW_BIN + 1e-9).floor() as usize).min(n_bins - 1);
        flow_bins[bin] += ba as f64;
        if exp.record_timeseries {
            timeseries.push(StepSample {
                t,
                n_a: state.occupancy(Reservoir::A),
                n_b: state.occupancy(Reservoir::B),
                v_a: report.speeds[0],
                v_b: report.speeds[1],
                transfer_ba: ba,
                transfer_ab: report.transfers[Gate::AB.index()],
                queue_ba: state.gate.queue_len(Gate::BA),
                queue_ab: state.gate.queue_len(Gate::AB),
                completions: report.completions,
            });
        }
    }
    state.t = horizon;

    let mut total_time = 0.0;
    for trip in &state.completed {
        total_time += trip.completion_time.unwrap_or(horizon) - trip.entry_time;
    }
    let mut unfinished = 0u64;
    let held = state.traveling.iter().flatten().chain(state.gate.queues.iter().flatten());
    for trip in held {
        total_time += trip.time_in_system(horizon);
        unfinished += 1;
    }
    let entered = state.counters.entered;
    let mean_travel_time = if entered > 0 { total_time * 60.0 / entered as f64 } else { 0.0 };
    let by_res = [state.hawkes[0].n_acc, state.hawkes[1].n_acc];

    let flow_series = flow_bins
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let t0 = i as f64 * FLOW_BIN;
            let width = FLOW_BIN.min(horizon - t0);
            (t0, n / width)
        })
        .collect();
    let invocations = match &control {
        Control::Mpc(mpc) => mpc.invocations(),
        Control::Fixed(_) => 0,
    };

    let mut result = RunResult {
        seed,
        mean_travel_time,
        objective_per_vehicle: 0.0,
        accidents_total: by_res[0] + by_res[1],
        accidents_by_reservoir: by_res,
        entered,
        completed: state.counters.completed,
        unfinished,
        flow_series,
        switch_times,
        invocations,
        conservation_violations: violations,
        accidents,
        timeseries,
    };
    result.objective_per_vehicle = result.objective_with(exp.weights.c_s);
    Ok(result)
}

/// Runs one seed of `scenario` under `policy` with the scenario's weights.
pub fn run_simulation(scenario: &Scenario, policy: PolicyKind, seed: u64) -> Result<RunResult> {
    Experiment::new(scenario, policy, scenario.cost_weights())?.run(seed)
}
