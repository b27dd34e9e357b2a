//! Seeded Monte-Carlo execution, aggregation and the experiment matrix.
//!
//! Every run owns independent ChaCha8 streams derived from its seed (stream 0
//! for trips, stream 1 for accidents, stream 2 for the forecast error). A
//! batch with base seed `s` uses seeds `s, s + 1, ...`, so adding runs never
//! perturbs earlier ones.

pub mod mc;
pub mod plant;
pub mod run;
pub mod sweep;

pub use mc::{run_batch, run_monte_carlo, Aggregate, Batch, Stat, MAX_FAILURE_SHARE, METRICS};
pub use plant::{run_fluid_closed_loop, PlantRun};
pub use run::{run_simulation, stream_rng, AccidentRecord, Experiment, RunResult, StepSample, FLOW_BIN};
pub use sweep::{sweep, theta_frontier, FrontierPoint, RateVariant, SweepCell, SweepResult};
