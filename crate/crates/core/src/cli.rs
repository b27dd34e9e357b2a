//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::controller::{risk_adjusted_occupancies, steady_state_gates, PolicyKind, ThresholdMode};
use crate::error::{ConfigError, Error, Result};
use crate::harness::{run_batch, sweep, Aggregate, Batch, Experiment, RateVariant};
use crate::output::{self, OutputWriter, TableRow};
use crate::scenario::{parse_scenario, Scenario};

/// Exit code of a successful command.
pub const EXIT_OK: i32 = 0;
/// Exit code of a runtime failure.
pub const EXIT_RUNTIME: i32 = 1;
/// Exit code of an invalid configuration.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "riskgate", version, about = "Risk-aware two-reservoir perimeter control experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    None,
    Threshold,
    Steady,
}

impl From<PolicyArg> for PolicyKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::None => PolicyKind::NoControl,
            PolicyArg::Threshold => PolicyKind::Threshold,
            PolicyArg::Steady => PolicyKind::SteadyState,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    OpenUntil,
    ClosedUntil,
}

impl From<ModeArg> for ThresholdMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::OpenUntil => ThresholdMode::OpenUntil,
            ModeArg::ClosedUntil => ThresholdMode::ClosedUntil,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Seed of a single run, or base seed of a batch (default: from the scenario).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of Monte-Carlo runs (default: from the scenario).
    #[arg(long)]
    pub runs: Option<usize>,
    /// Gate policy (default: from the scenario).
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Threshold mode (default: from the scenario).
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One seeded run: per-step time series, accident log and run metrics.
    Simulate(Common),
    /// Monte-Carlo batch of the policy for every trade-off weight, against the uncontrolled baseline.
    Mc(Common),
    /// Base and high accident rates times trade-off weights, plus the risk-aversion frontier.
    Sweep(Common),
    /// Steady-state occupancies and gate flows for given inflows.
    SteadyState {
        #[arg(long)]
        config: PathBuf,
        /// Inflow into A (veh/h).
        #[arg(long = "f-a")]
        f_a: f64,
        /// Inflow into B (veh/h).
        #[arg(long = "f-b")]
        f_b: f64,
        /// Risk aversion (default: from the scenario).
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Parse and validate a scenario file.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &Path, policy: Option<PolicyArg>, mode: Option<ModeArg>) -> std::result::Result<Scenario, ConfigError> {
    let mut sc = parse_scenario(path)?;
    if let Some(p) = policy {
        sc.controller.policy = p.into();
    }
    if let Some(m) = mode {
        sc.controller.mode = m.into();
    }
    Ok(sc)
}

fn policy_label(p: PolicyKind) -> &'static str {
    match p {
        PolicyKind::NoControl => "none",
        PolicyKind::SteadyState => "steady",
        PolicyKind::Threshold => "threshold",
    }
}

fn simulate(sc: &Scenario, c: &Common) -> Result<()> {
    let seed = c.seed.unwrap_or(sc.mc.base_seed);
    let exp = Experiment::new(sc, sc.controller.policy, sc.cost_weights())?.with_timeseries();
    let run = exp.run(seed)?;
    let mut w = OutputWriter::new();
    w.add("timeseries.csv", output::timeseries_csv(&run.timeseries));
    w.add("accidents.csv", output::accidents_csv(&run));
    w.add("run.csv", output::runs_csv(&[(policy_label(sc.controller.policy).to_string(), std::slice::from_ref(&run))]));
    w.add("scenario.json", output::scenario_json(sc));
    w.finish(&c.out)?;
    println!(
        "seed {seed}: mean travel time {:.3} min, accidents {}, unfinished {}, switches {}",
        run.mean_travel_time,
        run.accidents_total,
        run.unfinished,
        run.switch_times.len()
    );
    Ok(())
}

fn monte_carlo(sc: &Scenario, c: &Common) -> Result<()> {
    let n = c.runs.unwrap_or(sc.mc.n_runs);
    let seed = c.seed.unwrap_or(sc.mc.base_seed);
    let policy = sc.controller.policy;
    let baseline = run_batch(&Experiment::new(sc, PolicyKind::NoControl, sc.cost_weights_for(0.0, 0.0))?, n, seed)?;
    let mut cells: Vec<(f64, Batch, Aggregate)> = Vec::new();
    if policy != PolicyKind::NoControl {
        for &lambda in &sc.weights.lambda_tradeoff_list {
            let weights = sc.cost_weights_for(lambda, sc.weights.theta);
            let exp = Experiment::new(sc, policy, weights)?;
            cells.push((lambda, run_batch(&exp, n, seed)?, baseline.rescored(weights.c_s)));
        }
    }
    let label = |l: f64| format!("{}_w{l:.4}", policy_label(policy));

    let mut batches: Vec<(String, &[_])> = vec![("none".into(), &baseline.runs[..])];
    batches.extend(cells.iter().map(|(l, b, _)| (label(*l), &b.runs[..])));
    let mut agg_rows = vec![("none".to_string(), &baseline.aggregate, &baseline.aggregate)];
    agg_rows.extend(cells.iter().map(|(l, b, base)| (label(*l), &b.aggregate, base)));
    let controlled: Vec<(String, &_)> = cells.iter().map(|(l, b, _)| (label(*l), &b.aggregate)).collect();
    let rows = [TableRow {
        label: sc.name.clone(),
        baseline: &baseline.aggregate,
        cells: cells.iter().map(|(l, b, base)| (*l, &b.aggregate, base)).collect(),
    }];

    let mut w = OutputWriter::new();
    w.add("runs.csv", output::runs_csv(&batches));
    w.add("aggregate.csv", output::aggregate_csv(&agg_rows));
    w.add("flow_comparison.csv", output::flow_comparison_csv(&baseline.aggregate, &controlled));
    w.add("flow_comparison.svg", output::flow_chart(&baseline.aggregate, &controlled));
    w.add("tables.md", output::tables_md(&format!("{} — {n} runs", sc.name), &rows));
    w.add("scenario.json", output::scenario_json(sc));
    let bundle = w.finish(&c.out)?;
    println!("wrote {} files to {}", bundle.files.len() + 1, c.out.display());
    Ok(())
}

fn run_sweep(sc: &Scenario, c: &Common) -> Result<()> {
    let n = c.runs.unwrap_or(sc.mc.n_runs);
    let seed = c.seed.unwrap_or(sc.mc.base_seed);
    let result = sweep(
        sc,
        &sc.weights.lambda_tradeoff_list,
        &sc.weights.theta_list,
        &[RateVariant::Base, RateVariant::High],
        n,
        seed,
    )?;
    let cell_label = |r: RateVariant, l: f64| format!("{}_w{l:.4}", r.name());

    let mut batches: Vec<(String, &[_])> = Vec::new();
    let mut agg_rows = Vec::new();
    for (rate, b) in &result.baselines {
        batches.push((format!("{}_none", rate.name()), &b.runs[..]));
        agg_rows.push((format!("{}_none", rate.name()), &b.aggregate, &b.aggregate));
    }
    for cell in &result.cells {
        let label = cell_label(cell.rate, cell.lambda_tradeoff);
        batches.push((label.clone(), &cell.batch.runs[..]));
        agg_rows.push((label, &cell.batch.aggregate, &cell.baseline));
    }
    let base = result.baseline(RateVariant::Base);
    let controlled: Vec<(String, &_)> = result
        .cells
        .iter()
        .filter(|c| c.rate == RateVariant::Base)
        .map(|c| (cell_label(c.rate, c.lambda_tradeoff), &c.batch.aggregate))
        .collect();
    let mut tables = output::tables_md(&format!("{} — {n} runs per cell", sc.name), &output::sweep_rows(&result));
    tables.push_str(&output::frontier_md(&result.frontier));

    let mut w = OutputWriter::new();
    w.add("runs.csv", output::runs_csv(&batches));
    w.add("aggregate.csv", output::aggregate_csv(&agg_rows));
    w.add("flow_comparison.csv", output::flow_comparison_csv(base, &controlled));
    w.add("flow_comparison.svg", output::flow_chart(base, &controlled));
    w.add("frontier.csv", output::frontier_csv(&result.frontier));
    w.add("frontier.svg", output::frontier_chart(&result.frontier));
    w.add("tables.md", tables);
    w.add("scenario.json", output::scenario_json(sc));
    let bundle = w.finish(&c.out)?;
    println!("wrote {} files to {}", bundle.files.len() + 1, c.out.display());
    Ok(())
}

fn steady_state(sc: &Scenario, f_a: f64, f_b: f64, theta: Option<f64>) -> Result<()> {
    let net = &sc.reservoirs;
    let theta = theta.unwrap_or(sc.weights.theta);
    let n = risk_adjusted_occupancies(f_a, f_b, &net.a, &net.b, sc.weights.c_t, theta)?;
    let u = steady_state_gates(n, f_a, f_b, [&net.a, &net.b], sc.gate_capacity());
    println!("N_A* = {}", n[0]);
    println!("N_B* = {}", n[1]);
    println!("u_AB* = {}", u[0]);
    println!("u_BA* = {}", u[1]);
    Ok(())
}

fn execute(cli: Cli) -> std::result::Result<(), Error> {
    match cli.command {
        Command::Validate { config } => {
            let sc = parse_scenario(&config)?;
            println!("{}: valid scenario `{}`", config.display(), sc.name);
            Ok(())
        }
        Command::SteadyState { config, f_a, f_b, theta } => {
            let sc = parse_scenario(&config)?;
            steady_state(&sc, f_a, f_b, theta)
        }
        Command::Simulate(c) => simulate(&load(&c.config, c.policy, c.mode)?, &c),
        Command::Mc(c) => monte_carlo(&load(&c.config, c.policy, c.mode)?, &c),
        Command::Sweep(c) => run_sweep(&load(&c.config, c.policy, c.mode)?, &c),
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(Error::Config(e)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
