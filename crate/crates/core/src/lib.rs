//! Two-reservoir perimeter control under accident risk.
//!
//! The crate couples a Lagrangian bathtub traffic model of a city core (A)
//! and a motorway ring (B) to a self-exciting accident process whose live
//! load degrades reservoir speeds. Gates meter the transfers between the two
//! reservoirs; controllers range from analytic steady-state rules to an
//! event-triggered bang-bang MPC. A Monte-Carlo harness and a CLI reproduce
//! delay/safety trade-off experiments.
//!
//! Units: time in hours, distances in km, speeds in km/h, flows in veh/h,
//! densities in veh per lane-km. Reports convert times to minutes.

pub mod accidents;
pub mod bathtub;
pub mod cli;
pub mod controller;
pub mod demand;
pub mod error;
pub mod fluid;
pub mod harness;
pub mod network;
pub mod output;
pub mod scenario;
pub mod trips;

pub use accidents::{
    decay_load, intensity, kolmogorov_forward, moment_step, sample_accidents, HawkesState, MomentState,
};
pub use bathtub::{advance, exit_flow_exponential, Gate, GateControls, GateState, StepReport, SystemState};
pub use demand::{
    detour_fractions, effective_demands, generate_arrivals, ArrivalGenerator, DemandModel, LengthLaw,
};
pub use error::{ConfigError, Error, Result};
pub use network::{
    degradation_factor, effective_speed, flow, speed, DegradationState, DiagramShape, FundamentalDiagram,
    Network, Reservoir, ReservoirParams,
};
pub use trips::{Leg, LegClass, Trip};
pub use controller::{
    optimize_threshold, risk_adjusted_occupancies, rollout_cost, steady_state_gates, steady_state_occupancies,
    CostWeights, GatePolicy, MpcController, PolicyKind, RolloutResult, Schedule, ThresholdMode, Trigger,
};
pub use fluid::{FluidModel, FluidState};
pub use scenario::{parse_scenario, Scenario};
