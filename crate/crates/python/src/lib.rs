//! Python bindings: scenarios, single runs, Monte-Carlo batches, the
//! steady-state rule and the threshold optimiser.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use riskgate_core::controller::{risk_adjusted_occupancies, steady_state_gates, MpcController, PolicyKind, ThresholdMode};
use riskgate_core::error::{ConfigError, Error};
use riskgate_core::harness::{run_batch, Experiment, Stat, METRICS};
use riskgate_core::network::FundamentalDiagram;
use riskgate_core::scenario::{bundled, parse_scenario};

fn config_err(e: ConfigError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn core_err(e: Error) -> PyErr {
    match e {
        Error::Config(c) => config_err(c),
        Error::Domain { .. } | Error::Infeasible { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn policy_kind(name: &str) -> PyResult<PolicyKind> {
    match name {
        "none" => Ok(PolicyKind::NoControl),
        "threshold" => Ok(PolicyKind::Threshold),
        "steady" => Ok(PolicyKind::SteadyState),
        _ => Err(PyValueError::new_err(format!(
            "unknown policy `{name}`; expected one of none, threshold, steady"
        ))),
    }
}

/// A validated experiment configuration.
#[pyclass(name = "Scenario", module = "riskgate", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: riskgate_core::Scenario,
}

#[pymethods]
impl PyScenario {
    /// Parses and validates a scenario file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        parse_scenario(path).map(|inner| PyScenario { inner }).map_err(config_err)
    }

    /// Parses and validates a JSON document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        riskgate_core::Scenario::from_json(text, "<string>")
            .map(|inner| PyScenario { inner })
            .map_err(config_err)
    }

    /// One of the bundled scenarios: `copenhagen_base`, `copenhagen_high`, `toy_symmetric`.
    #[staticmethod]
    fn bundled(name: &str) -> PyResult<Self> {
        let inner = match name {
            "copenhagen_base" => bundled::copenhagen_base(),
            "copenhagen_high" => bundled::copenhagen_high(),
            "toy_symmetric" => bundled::toy_symmetric(),
            _ => return Err(PyValueError::new_err(format!("no bundled scenario `{name}`"))),
        };
        Ok(PyScenario { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    /// Simulated horizon (min).
    #[getter]
    fn horizon_min(&self) -> f64 {
        self.inner.horizon() * 60.0
    }

    /// Vehicles generated by the demand profile.
    #[getter]
    fn total_demand(&self) -> f64 {
        self.inner.total_demand()
    }

    /// Copy with the trade-off weight and risk aversion replaced.
    fn with_weights(&self, lambda_tradeoff: f64, theta: f64) -> PyResult<Self> {
        let mut inner = self.inner.clone();
        inner.weights.lambda_tradeoff = lambda_tradeoff;
        inner.weights.theta = theta;
        inner.validate().map_err(config_err)?;
        Ok(PyScenario { inner })
    }

    /// Copy with the city-core accident parameters scaled by the high-rate multiplier.
    fn high_rate(&self) -> Self {
        PyScenario {
            inner: self.inner.high_rate(),
        }
    }

    fn __repr__(&self) -> String {
        format!("Scenario(name={:?}, horizon_min={})", self.inner.name, self.horizon_min())
    }
}

/// Runs one seeded simulation and returns its metrics. Times are in minutes.
#[pyfunction]
#[pyo3(signature = (scenario, policy = "threshold", seed = None))]
fn simulate<'py>(py: Python<'py>, scenario: &PyScenario, policy: &str, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let sc = &scenario.inner;
    let kind = policy_kind(policy)?;
    let seed = seed.unwrap_or(sc.mc.base_seed);
    let run = py
        .detach(|| Experiment::new(sc, kind, sc.cost_weights()).and_then(|e| e.run(seed)))
        .map_err(core_err)?;
    let d = PyDict::new(py);
    d.set_item("seed", run.seed)?;
    d.set_item("mean_travel_time", run.mean_travel_time)?;
    d.set_item("objective_per_vehicle", run.objective_per_vehicle)?;
    d.set_item("accidents_total", run.accidents_total)?;
    d.set_item("accidents_a", run.accidents_by_reservoir[0])?;
    d.set_item("accidents_b", run.accidents_by_reservoir[1])?;
    d.set_item("entered", run.entered)?;
    d.set_item("completed", run.completed)?;
    d.set_item("unfinished", run.unfinished)?;
    d.set_item("invocations", run.invocations)?;
    d.set_item("conservation_violations", run.conservation_violations)?;
    d.set_item("switch_times", run.switch_times.iter().map(|t| t * 60.0).collect::<Vec<_>>())?;
    d.set_item("accident_times", run.accidents.iter().map(|a| a.t * 60.0).collect::<Vec<_>>())?;
    d.set_item(
        "flow_series",
        run.flow_series.iter().map(|&(t, f)| (t * 60.0, f)).collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// Runs `n_runs` seeds in parallel and returns `(mean, standard error)` per metric.
#[pyfunction]
#[pyo3(signature = (scenario, policy = "threshold", n_runs = None, base_seed = None))]
fn monte_carlo<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    policy: &str,
    n_runs: Option<usize>,
    base_seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let sc = &scenario.inner;
    let kind = policy_kind(policy)?;
    let n = n_runs.unwrap_or(sc.mc.n_runs);
    let seed = base_seed.unwrap_or(sc.mc.base_seed);
    let batch = py
        .detach(|| Experiment::new(sc, kind, sc.cost_weights()).and_then(|e| run_batch(&e, n, seed)))
        .map_err(core_err)?;
    let agg = &batch.aggregate;
    let d = PyDict::new(py);
    d.set_item("n_runs", agg.n_runs)?;
    d.set_item("n_failed", agg.n_failed)?;
    for m in METRICS {
        let Stat { mean, se } = agg.metric(m).expect("listed metric");
        d.set_item(m, (mean, se))?;
    }
    d.set_item(
        "mean_flow",
        agg.mean_flow.iter().map(|&(t, f)| (t * 60.0, f)).collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// Risk-adjusted steady-state occupancies and gate flows for inflows `f_a`, `f_b` (veh/h).
#[pyfunction]
#[pyo3(signature = (scenario, f_a, f_b, theta = None))]
fn steady_state<'py>(py: Python<'py>, scenario: &PyScenario, f_a: f64, f_b: f64, theta: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
    let sc = &scenario.inner;
    let net = &sc.reservoirs;
    let theta = theta.unwrap_or(sc.weights.theta);
    let n = risk_adjusted_occupancies(f_a, f_b, &net.a, &net.b, sc.weights.c_t, theta).map_err(core_err)?;
    let u = steady_state_gates(n, f_a, f_b, [&net.a, &net.b], sc.gate_capacity());
    let d = PyDict::new(py);
    d.set_item("n_a", n[0])?;
    d.set_item("n_b", n[1])?;
    d.set_item("u_ab", u[0])?;
    d.set_item("u_ba", u[1])?;
    Ok(d)
}

/// Optimal single-switch plan from an empty network at `t = 0`.
#[pyfunction]
#[pyo3(signature = (scenario, lambda_tradeoff = None, theta = None))]
fn optimal_threshold<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    lambda_tradeoff: Option<f64>,
    theta: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let sc = &scenario.inner;
    let weights = sc.cost_weights_for(
        lambda_tradeoff.unwrap_or(sc.weights.lambda_tradeoff),
        theta.unwrap_or(sc.weights.theta),
    );
    let sol = py.detach(|| {
        let model = sc.fluid_model(sc.demand.clone());
        MpcController::initial_solution(&model, &weights, &sc.base_policy(), sc.prediction_horizon(), sc.horizon())
    });
    let d = PyDict::new(py);
    d.set_item("t_star_min", sol.policy.t_star * 60.0)?;
    d.set_item(
        "mode",
        match sol.policy.mode {
            ThresholdMode::OpenUntil => "open_until",
            ThresholdMode::ClosedUntil => "closed_until",
        },
    )?;
    d.set_item("cost", sol.result.j)?;
    d.set_item("delay_term", sol.result.delay_term)?;
    d.set_item("safety_term", sol.result.safety_term)?;
    d.set_item("risk_term", sol.result.risk_term)?;
    d.set_item("mean_accidents", sol.result.m_t)?;
    d.set_item("var_accidents", sol.result.var_t)?;
    Ok(d)
}

/// Accident-count distribution `p_0..p_{n_max}` at `horizon_h` under a constant rate (1/h).
#[pyfunction]
#[pyo3(signature = (rate, n_max, horizon_h, dt_h = 1.0 / 3600.0))]
fn count_distribution(py: Python<'_>, rate: f64, n_max: usize, horizon_h: f64, dt_h: f64) -> PyResult<Vec<f64>> {
    py.detach(|| riskgate_core::kolmogorov_forward(|_| rate, n_max, horizon_h, dt_h))
        .map_err(core_err)
}

/// Speed (km/h) of a triangular fundamental diagram at density `rho` (veh/lane-km).
#[pyfunction]
fn triangular_speed(rho: f64, v_f: f64, rho_j: f64, q_max: f64) -> PyResult<f64> {
    FundamentalDiagram::triangular(v_f, rho_j, q_max)
        .and_then(|fd| fd.speed(rho))
        .map_err(core_err)
}

#[pymodule]
fn riskgate(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(steady_state, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(count_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(triangular_speed, m)?)?;
    Ok(())
}
