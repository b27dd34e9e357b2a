//! Experiment configuration: parsing, defaults and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bathtub::Gate;
use crate::controller::{CostWeights, GatePolicy, PolicyKind, ThresholdMode, Trigger};
use crate::demand::DemandModel;
use crate::error::ConfigError;
use crate::fluid::{FluidModel, DEFAULT_STEP, DEFAULT_STRATA};
use crate::network::{Network, Reservoir};
use crate::trips::LegClass;

/// Per-gate value in the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerGate {
    #[serde(rename = "AB")]
    pub ab: f64,
    #[serde(rename = "BA")]
    pub ba: f64,
}

impl PerGate {
    pub fn to_array(self) -> [f64; 2] {
        [self.ab, self.ba]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateName {
    AB,
    BA,
}

impl From<GateName> for Gate {
    fn from(g: GateName) -> Gate {
        match g {
            GateName::AB => Gate::AB,
            GateName::BA => Gate::BA,
        }
    }
}

fn zero_gates() -> PerGate {
    PerGate { ab: 0.0, ba: 0.0 }
}

fn default_gated() -> Vec<GateName> {
    vec![GateName::BA]
}

/// Gate metering bounds and the set of gates driven by the threshold policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    /// Metering capacities `u_bar` (veh/h); also the `u_max` level.
    pub capacity: PerGate,
    /// `u_min` level (veh/h).
    #[serde(default = "zero_gates")]
    pub u_min: PerGate,
    #[serde(default = "default_gated")]
    pub gated: Vec<GateName>,
    /// Perimeter length (km); informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perimeter_km: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_tradeoffs() -> Vec<f64> {
    vec![0.0]
}

fn default_thetas() -> Vec<f64> {
    vec![0.0]
}

/// Objective weights and the sweep lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    /// Price of one vehicle-minute of delay.
    #[serde(default = "one")]
    pub c_t: f64,
    /// Accepted extra minutes per vehicle per accident avoided; `c_S` is this
    /// times the total demand.
    #[serde(default)]
    pub lambda_tradeoff: f64,
    #[serde(default)]
    pub theta: f64,
    /// Trade-off values swept by the experiment matrix.
    #[serde(default = "default_tradeoffs")]
    pub lambda_tradeoff_list: Vec<f64>,
    /// Risk-aversion values of the frontier sweep.
    #[serde(default = "default_thetas")]
    pub theta_list: Vec<f64>,
}

fn default_dt() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Simulation step (s).
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    /// Simulated horizon (min).
    pub horizon_min: f64,
    /// Demand-free clearance phase at the end of the horizon (min).
    pub clearance_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    Event,
    Periodic,
}

fn default_policy() -> PolicyKind {
    PolicyKind::Threshold
}

fn default_mode() -> ThresholdMode {
    ThresholdMode::ClosedUntil
}

fn default_tau() -> f64 {
    60.0
}

fn default_hp() -> f64 {
    90.0
}

fn default_trigger() -> TriggerKind {
    TriggerKind::Event
}

fn default_strata() -> usize {
    DEFAULT_STRATA
}

fn default_step_s() -> f64 {
    DEFAULT_STEP * 3600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default = "default_mode")]
    pub mode: ThresholdMode,
    #[serde(default = "default_trigger")]
    pub trigger: TriggerKind,
    /// Control interval of the periodic variant (s).
    #[serde(default = "default_tau")]
    pub tau_c_s: f64,
    /// Prediction horizon (min).
    #[serde(default = "default_hp")]
    pub horizon_min: f64,
    /// Strata per cohort in the prediction model.
    #[serde(default = "default_strata")]
    pub strata: usize,
    /// Step of the prediction model (s).
    #[serde(default = "default_step_s")]
    pub step_s: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            policy: default_policy(),
            mode: default_mode(),
            trigger: default_trigger(),
            tau_c_s: default_tau(),
            horizon_min: default_hp(),
            strata: default_strata(),
            step_s: default_step_s(),
        }
    }
}

fn default_runs() -> usize {
    300
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub base_seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_runs: default_runs(),
            base_seed: 0,
        }
    }
}

fn default_multiplier() -> f64 {
    1.5
}

/// How the high-accident-rate variant is derived from this scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HighRateConfig {
    /// Factor applied to alpha, beta, gamma, eta and kappa of the scaled reservoir.
    #[serde(default = "default_multiplier")]
    pub multiplier: f64,
    #[serde(default = "default_scaled")]
    pub reservoir: Reservoir,
}

fn default_scaled() -> Reservoir {
    Reservoir::A
}

impl Default for HighRateConfig {
    fn default() -> Self {
        HighRateConfig {
            multiplier: default_multiplier(),
            reservoir: default_scaled(),
        }
    }
}

/// The unit of experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub reservoirs: Network,
    pub demand: DemandModel,
    pub gates: GateConfig,
    pub weights: WeightConfig,
    pub sim: SimConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub high_rate: HighRateConfig,
}

impl Scenario {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str, origin: &str) -> Result<Scenario, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            let path = e.path().to_string();
            ConfigError::Parse {
                path: if path == "." { origin.to_string() } else { format!("{origin}: {path}") },
                message: format!("{inner} (line {}, column {})", inner.line(), inner.column()),
            }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    /// Checks every invariant, reporting the field path of the first violation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn inv(path: impl Into<String>, constraint: impl Into<String>) -> ConfigError {
            ConfigError::invariant(path, constraint)
        }
        for r in Reservoir::ALL {
            if let Err((field, msg)) = self.reservoirs.get(r).check() {
                return Err(inv(format!("reservoirs.{r}.{field}"), msg));
            }
        }
        let d = &self.demand;
        if d.profile.is_empty() {
            return Err(inv("demand.profile", "at least one piece is required"));
        }
        for (i, p) in d.profile.iter().enumerate() {
            if !(p.rate_veh_h >= 0.0 && p.rate_veh_h.is_finite()) {
                return Err(inv(format!("demand.profile[{i}].rate_veh_h"), "must be finite and >= 0"));
            }
            if !p.start_min.is_finite() || (i == 0 && p.start_min != 0.0) {
                return Err(inv(format!("demand.profile[{i}].start_min"), "the first piece starts at 0"));
            }
            if i > 0 && p.start_min <= d.profile[i - 1].start_min {
                return Err(inv(format!("demand.profile[{i}].start_min"), "start times must increase"));
            }
        }
        if !(0.0..=1.0).contains(&d.share_a) {
            return Err(inv("demand.share_a", "must lie in [0, 1]"));
        }
        for (name, row) in [("A", d.od_shares.from_a), ("B", d.od_shares.from_b)] {
            if row.to_a < 0.0 || row.to_b < 0.0 || ((row.to_a + row.to_b) - 1.0).abs() > 1e-9 {
                return Err(inv(format!("demand.od_shares.{name}"), "shares must be >= 0 and sum to 1"));
            }
        }
        if d.detour_enabled && !(d.detour_elasticity > 0.0) {
            return Err(inv("demand.detour_elasticity", "must be > 0 when detours are enabled"));
        }
        if !(d.forecast_error_bound >= 0.0) {
            return Err(inv("demand.forecast_error_bound", "must be >= 0"));
        }
        let peak = d.profile.iter().map(|p| p.rate_veh_h).fold(0.0, f64::max);
        if peak > d.demand_ceiling.a + d.demand_ceiling.b {
            return Err(inv("demand.demand_ceiling", "total inflow exceeds the ceiling D_A + D_B"));
        }
        for class in self.required_classes() {
            let field = class_field(class);
            match d.trip_lengths.get(class) {
                None => {
                    return Err(inv(format!("demand.trip_lengths.{field}"), "required by a route with positive share"))
                }
                Some(law) => {
                    if let Err(msg) = law.check() {
                        return Err(inv(format!("demand.trip_lengths.{field}"), msg));
                    }
                }
            }
        }

        let g = &self.gates;
        for (name, cap, lo) in [
            ("AB", g.capacity.ab, g.u_min.ab),
            ("BA", g.capacity.ba, g.u_min.ba),
        ] {
            if !(cap >= 0.0 && cap.is_finite()) {
                return Err(inv(format!("gates.capacity.{name}"), "must be finite and >= 0"));
            }
            if !(lo >= 0.0 && lo <= cap) {
                return Err(inv(format!("gates.u_min.{name}"), "must lie in [0, capacity]"));
            }
        }

        let w = &self.weights;
        for (name, v) in [("c_t", w.c_t), ("lambda_tradeoff", w.lambda_tradeoff), ("theta", w.theta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(inv(format!("weights.{name}"), "must be finite and >= 0"));
            }
        }
        if w.lambda_tradeoff_list.is_empty() || w.lambda_tradeoff_list.iter().any(|v| !(*v >= 0.0)) {
            return Err(inv("weights.lambda_tradeoff_list", "must be non-empty with values >= 0"));
        }
        if w.theta_list.is_empty() || w.theta_list.iter().any(|v| !(*v >= 0.0)) {
            return Err(inv("weights.theta_list", "must be non-empty with values >= 0"));
        }

        let s = &self.sim;
        if !(s.dt_s > 0.0 && s.dt_s.is_finite()) {
            return Err(inv("sim.dt_s", "must be > 0"));
        }
        if !(s.horizon_min > 0.0 && s.horizon_min.is_finite()) {
            return Err(inv("sim.horizon_min", "must be > 0"));
        }
        if !(s.clearance_min >= 0.0) {
            return Err(inv("sim.clearance_min", "must be >= 0"));
        }
        let demand_end = d.end_of_demand() * 60.0;
        if s.horizon_min + 1e-9 < demand_end + s.clearance_min {
            return Err(inv(
                "sim.horizon_min",
                format!(
                    "horizon must cover the demand period ({demand_end} min) plus the clearance ({} min)",
                    s.clearance_min
                ),
            ));
        }

        let c = &self.controller;
        if !(c.tau_c_s > 0.0) {
            return Err(inv("controller.tau_c_s", "must be > 0"));
        }
        if !(c.horizon_min > 0.0) {
            return Err(inv("controller.horizon_min", "must be > 0"));
        }
        if c.strata == 0 {
            return Err(inv("controller.strata", "must be >= 1"));
        }
        if !(c.step_s > 0.0) {
            return Err(inv("controller.step_s", "must be > 0"));
        }
        if self.mc.n_runs == 0 {
            return Err(inv("mc.n_runs", "must be >= 1"));
        }
        if !(self.high_rate.multiplier > 0.0) {
            return Err(inv("high_rate.multiplier", "must be > 0"));
        }
        Ok(())
    }

    /// Leg classes used by routes with positive probability.
    pub fn required_classes(&self) -> Vec<LegClass> {
        use crate::demand::Route;
        let d = &self.demand;
        let mut routes = Vec::new();
        let od = d.od_shares;
        if d.share_a > 0.0 {
            if od.from_a.to_b > 0.0 {
                routes.push(Route::AToB);
            }
            if od.from_a.to_a > 0.0 {
                routes.push(Route::AInternal);
                if d.detour_enabled {
                    routes.push(Route::ADetour);
                }
            }
        }
        if d.share_a < 1.0 {
            if od.from_b.to_a > 0.0 {
                routes.push(Route::BToA);
            }
            if od.from_b.to_b > 0.0 {
                routes.push(Route::BInternal);
                if d.detour_enabled {
                    routes.push(Route::BDetour);
                }
            }
        }
        let mut classes: Vec<LegClass> = routes.iter().flat_map(|r| r.classes().iter().copied()).collect();
        classes.sort_by_key(|c| *c as u8);
        classes.dedup();
        classes
    }

    /// Simulation step (h).
    pub fn dt(&self) -> f64 {
        self.sim.dt_s / 3600.0
    }

    /// Simulated horizon `T` (h).
    pub fn horizon(&self) -> f64 {
        self.sim.horizon_min / 60.0
    }

    pub fn steps(&self) -> usize {
        (self.horizon() / self.dt() - 1e-9).ceil() as usize
    }

    /// Total demand over the horizon (veh).
    pub fn total_demand(&self) -> f64 {
        self.demand.vehicles_between(0.0, self.horizon())
    }

    pub fn gate_capacity(&self) -> [f64; 2] {
        self.gates.capacity.to_array()
    }

    pub fn gate_levels(&self) -> [(f64, f64); 2] {
        let (lo, hi) = (self.gates.u_min.to_array(), self.gates.capacity.to_array());
        [(lo[0], hi[0]), (lo[1], hi[1])]
    }

    pub fn gated(&self) -> [bool; 2] {
        let mut out = [false; 2];
        for &g in &self.gates.gated {
            out[Gate::from(g).index()] = true;
        }
        out
    }

    /// Weights of the configured trade-off.
    pub fn cost_weights(&self) -> CostWeights {
        self.cost_weights_for(self.weights.lambda_tradeoff, self.weights.theta)
    }

    pub fn cost_weights_for(&self, lambda_tradeoff: f64, theta: f64) -> CostWeights {
        CostWeights::from_tradeoff(self.weights.c_t, lambda_tradeoff, theta, self.total_demand())
    }

    /// Threshold template with the configured levels, gated set and mode.
    pub fn base_policy(&self) -> GatePolicy {
        GatePolicy::threshold(self.gate_levels(), self.gated(), self.controller.mode, self.horizon())
    }

    pub fn trigger(&self) -> Trigger {
        match self.controller.trigger {
            TriggerKind::Event => Trigger::Event,
            TriggerKind::Periodic => Trigger::Periodic {
                interval: self.controller.tau_c_s / 3600.0,
            },
        }
    }

    /// Prediction horizon (h).
    pub fn prediction_horizon(&self) -> f64 {
        self.controller.horizon_min / 60.0
    }

    /// Prediction model with the given demand forecast.
    pub fn fluid_model(&self, forecast: DemandModel) -> FluidModel {
        FluidModel::with_resolution(
            self.reservoirs.clone(),
            forecast,
            self.gate_capacity(),
            self.controller.strata,
            self.controller.step_s / 3600.0,
        )
    }

    /// High-accident-rate variant: the configured reservoir's alpha, beta,
    /// gamma, eta and kappa scaled by the multiplier.
    pub fn high_rate(&self) -> Scenario {
        let mut out = self.clone();
        let m = self.high_rate.multiplier;
        let p = out.reservoirs.get_mut(self.high_rate.reservoir);
        p.alpha *= m;
        p.beta *= m;
        p.gamma *= m;
        p.eta *= m;
        p.kappa *= m;
        out.name = format!("{}_high", self.name);
        out
    }
}

fn class_field(c: LegClass) -> &'static str {
    match c {
        LegClass::AInternal => "a_internal",
        LegClass::BInternal => "b_internal",
        LegClass::AOutbound => "a_outbound",
        LegClass::BInbound => "b_inbound",
        LegClass::BOutbound => "b_outbound",
        LegClass::AInbound => "a_inbound",
    }
}

/// Reads, parses and validates a scenario file.
pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&text, &path.display().to_string())
}

/// Scenario files shipped with the crate.
pub mod bundled {
    pub const COPENHAGEN_BASE: &str = include_str!("../scenarios/copenhagen_base.json");
    pub const COPENHAGEN_HIGH: &str = include_str!("../scenarios/copenhagen_high.json");
    pub const TOY_SYMMETRIC: &str = include_str!("../scenarios/toy_symmetric.json");

    use super::Scenario;

    pub fn copenhagen_base() -> Scenario {
        Scenario::from_json(COPENHAGEN_BASE, "copenhagen_base.json").expect("bundled scenario is valid")
    }

    pub fn copenhagen_high() -> Scenario {
        Scenario::from_json(COPENHAGEN_HIGH, "copenhagen_high.json").expect("bundled scenario is valid")
    }

    pub fn toy_symmetric() -> Scenario {
        Scenario::from_json(TOY_SYMMETRIC, "toy_symmetric.json").expect("bundled scenario is valid")
    }
}
