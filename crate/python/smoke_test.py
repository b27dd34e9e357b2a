"""Smoke test for the riskgate Python extension.

Build and install first:  pip install --no-build-isolation ./crates/python
Then run:                 python python/smoke_test.py   (or pytest python/)
"""

import json
import math

import riskgate


def test_scenario_round_trip():
    sc = riskgate.Scenario.bundled("copenhagen_base")
    again = riskgate.Scenario.from_json(sc.to_json())
    assert again.name == sc.name
    assert again.horizon_min == sc.horizon_min
    assert json.loads(sc.to_json())["reservoirs"]["A"]["gamma"] > 0


def test_invalid_scenario_raises_value_error():
    doc = json.loads(riskgate.Scenario.bundled("toy_symmetric").to_json())
    doc["reservoirs"]["A"]["gamma"] = 0.1
    try:
        riskgate.Scenario.from_json(json.dumps(doc))
    except ValueError as e:
        assert "reservoirs.A.gamma" in str(e)
    else:
        raise AssertionError("invalid scenario accepted")


def test_simulate_is_deterministic():
    sc = riskgate.Scenario.bundled("toy_symmetric")
    a = riskgate.simulate(sc, "threshold", seed=11)
    b = riskgate.simulate(sc, "threshold", seed=11)
    assert a == b
    assert a["conservation_violations"] == 0
    assert a["entered"] == a["completed"] + a["unfinished"]


def test_monte_carlo_reports_mean_and_se():
    sc = riskgate.Scenario.bundled("toy_symmetric")
    mc = riskgate.monte_carlo(sc, "none", n_runs=8, base_seed=1)
    mean, se = mc["mean_travel_time"]
    assert mc["n_runs"] == 8 and mean > 0 and se >= 0


def test_steady_state_and_threshold():
    sc = riskgate.Scenario.bundled("copenhagen_base")
    ss = riskgate.steady_state(sc, 1800.0, 10200.0)
    assert ss["n_a"] >= 0 and ss["n_b"] >= 0
    opt = riskgate.optimal_threshold(sc)
    assert 0.0 <= opt["t_star_min"] <= sc.horizon_min
    assert opt["mode"] in ("open_until", "closed_until")
    assert math.isclose(
        opt["cost"], opt["delay_term"] + opt["safety_term"] + opt["risk_term"], rel_tol=1e-9
    )


def test_count_distribution_is_poisson():
    p = riskgate.count_distribution(3.0, 60, 1.0)
    assert abs(sum(p) - 1.0) < 1e-9
    for n in range(10):
        assert abs(p[n] - math.exp(-3.0) * 3.0**n / math.factorial(n)) < 1e-6


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"ok  {name}")
