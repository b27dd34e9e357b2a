//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use riskgate_core::accidents::HawkesState;
use riskgate_core::controller::{
    optimize_threshold, rollout_cost, CostWeights, Discharge, GatePolicy, PiecewiseSchedule, ThresholdMode,
};
use riskgate_core::fluid::FluidState;
use riskgate_core::network::ReservoirParams;
use riskgate_core::scenario::{bundled, Scenario};

/// Sample mean, variance and the standard errors of both.
#[derive(Debug, Clone, Copy)]
pub struct SampleMoments {
    pub mean: f64,
    pub var: f64,
    pub se_mean: f64,
    pub se_var: f64,
}

pub fn sample_moments(xs: &[f64]) -> SampleMoments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    SampleMoments {
        mean,
        var,
        se_mean: (var / n).sqrt(),
        se_var: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
    }
}

/// Exact mean and variance of the count of a self-exciting process with
/// constant base rate `mu`, unit marks decaying at `gamma` and gain `beta`,
/// started empty, over `[0, horizon]`.
///
/// The generator of `(N, a)` closes on the moments
/// `(E N, E a, E N^2, E N a, E a^2)`; the resulting linear system is
/// integrated with RK4.
pub fn hawkes_count_moments(mu: f64, beta: f64, gamma: f64, horizon: f64) -> (f64, f64) {
    let rhs = |x: &[f64; 5]| -> [f64; 5] {
        let [en, ea, _, ena, ea2] = *x;
        let el = mu + beta * ea;
        [
            el,
            -gamma * ea + el,
            2.0 * (mu * en + beta * ena) + el,
            -gamma * ena + mu * (en + ea + 1.0) + beta * (ena + ea2 + ea),
            -2.0 * gamma * ea2 + 2.0 * (mu * ea + beta * ea2) + el,
        ]
    };
    let steps = 100_000;
    let h = horizon / steps as f64;
    let mut x = [0.0; 5];
    let axpy = |x: &[f64; 5], k: &[f64; 5], s: f64| std::array::from_fn::<f64, 5, _>(|i| x[i] + s * k[i]);
    for _ in 0..steps {
        let k1 = rhs(&x);
        let k2 = rhs(&axpy(&x, &k1, 0.5 * h));
        let k3 = rhs(&axpy(&x, &k2, 0.5 * h));
        let k4 = rhs(&axpy(&x, &k3, h));
        for i in 0..5 {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    (x[0], x[2] - x[0] * x[0])
}

/// Accident counts over `[0, horizon]` of `paths` sampled paths with the
/// load-free intensity frozen at `base`.
pub fn frozen_exposure_counts(params: &ReservoirParams, base: f64, horizon: f64, dt: f64, paths: usize, seed: u64) -> Vec<f64> {
    let steps = (horizon / dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..paths)
        .map(|_| {
            let mut h = HawkesState::new();
            for k in 0..steps {
                h.step(base, params, k as f64 * dt, dt, &mut rng);
            }
            h.n_acc as f64
        })
        .collect()
}

/// Brute-force minimum of `N_A + N_B` subject to `g_A(N_A) + g_B(N_B) = F`
/// on uncongested branches: `N_A` on a grid of `step` vehicles, `N_B` from the
/// constraint by bisection. Returns `(N_A, N_B)`.
pub fn brute_force_steady(ga: &dyn Discharge, gb: &dyn Discharge, total_flow: f64, step: f64) -> [f64; 2] {
    let (nca, ncb) = (ga.critical_occupancy(), gb.critical_occupancy());
    let cap_b = gb.g(ncb);
    let mut best = [f64::NAN; 2];
    let mut best_total = f64::INFINITY;
    let mut n_a = 0.0;
    while n_a <= nca {
        let rest = total_flow - ga.g(n_a);
        if rest < 0.0 {
            break;
        }
        if rest <= cap_b {
            let (mut lo, mut hi) = (0.0, ncb);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if gb.g(mid) < rest {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let n_b = 0.5 * (lo + hi);
            if n_a + n_b < best_total {
                best_total = n_a + n_b;
                best = [n_a, n_b];
            }
        }
        n_a += step;
    }
    best
}

/// Toy variant in which gating matters: smaller, asymmetrically loaded
/// reservoirs.
pub fn loaded_toy(lane_km: f64, rate: f64, duration_min: f64) -> Scenario {
    let mut sc = bundled::toy_symmetric();
    sc.name = format!("toy_loaded_{lane_km}");
    sc.reservoirs.a.lane_length_km = lane_km;
    sc.reservoirs.b.lane_length_km = lane_km;
    sc.demand.profile[0].rate_veh_h = rate;
    sc.demand.profile[1].start_min = duration_min;
    sc.demand.share_a = 0.7;
    sc.validate().expect("loaded toy is valid");
    sc
}

/// Result of the exhaustive search over piecewise-constant two-level gate
/// schedules.
#[derive(Debug, Clone)]
pub struct Enumeration {
    pub best_cost: f64,
    pub best_levels: Vec<[f64; 2]>,
    pub open_cost: f64,
    pub threshold_cost: f64,
}

impl Enumeration {
    /// Relative excess of the best threshold policy over the enumerated optimum.
    pub fn gap(&self) -> f64 {
        (self.threshold_cost - self.best_cost) / self.best_cost.abs()
    }
}

/// Enumerates every schedule with `intervals` slots of `interval_h` hours and
/// two levels per gate, and the best single-switch threshold policy over all
/// gated sets and both modes.
pub fn enumerate_bang_bang(sc: &Scenario, weights: &CostWeights, interval_h: f64, intervals: usize) -> Enumeration {
    let model = sc.fluid_model(sc.demand.clone());
    let init = FluidState::empty(0.0);
    let t_end = sc.horizon();
    let levels = sc.gate_levels();
    let pick = |code: u64, k: usize, g: usize| {
        if (code >> (2 * k + g)) & 1 == 1 {
            levels[g].1
        } else {
            levels[g].0
        }
    };
    let mut best_cost = f64::INFINITY;
    let mut best_levels = Vec::new();
    for code in 0..(1u64 << (2 * intervals)) {
        let lv: Vec<[f64; 2]> = (0..intervals).map(|k| [pick(code, k, 0), pick(code, k, 1)]).collect();
        let schedule = PiecewiseSchedule {
            t0: 0.0,
            interval: interval_h,
            levels: lv.clone(),
        };
        let j = rollout_cost(&model, &init, &schedule, t_end, weights).j;
        if j < best_cost {
            best_cost = j;
            best_levels = lv;
        }
    }
    let mut threshold_cost = f64::INFINITY;
    for gated in [[true, true], [true, false], [false, true]] {
        for mode in [ThresholdMode::OpenUntil, ThresholdMode::ClosedUntil] {
            let base = GatePolicy::threshold(levels, gated, mode, t_end);
            let sol = optimize_threshold(&model, &init, weights, &base, mode, t_end);
            threshold_cost = threshold_cost.min(sol.result.j);
        }
    }
    let open_cost = rollout_cost(&model, &init, &GatePolicy::no_control(levels), t_end, weights).j;
    Enumeration {
        best_cost,
        best_levels,
        open_cost,
        threshold_cost,
    }
}

/// Verdict on the shape of a controlled transfer-flow series against the
/// uncontrolled one.
#[derive(Debug, Clone)]
pub struct SpikeCheck {
    pub pass: bool,
    pub detail: String,
}

/// A single release spike near `t_star` (h), after which the controlled mean
/// flow stays within `tol` of the uncontrolled mean flow. Bins with little
/// baseline flow are compared against `tol` times the baseline peak.
pub fn release_spike(baseline: &[(f64, f64)], controlled: &[(f64, f64)], t_star: f64, tol: f64) -> SpikeCheck {
    let fail = |detail: String| SpikeCheck { pass: false, detail };
    if t_star <= 0.0 {
        return fail("no withholding phase: the optimal threshold is t* = 0".into());
    }
    let peak = baseline.iter().map(|b| b.1).fold(0.0, f64::max);
    let within = |b: f64, c: f64| (c - b).abs() <= tol * b.max(tol * peak);
    let spike_window = 3.0 / 60.0;
    let spike_bins: Vec<usize> = (0..controlled.len())
        .filter(|&i| (controlled[i].0 - t_star).abs() <= spike_window)
        .collect();
    let Some(&spike) = spike_bins.iter().max_by(|&&i, &&j| controlled[i].1.total_cmp(&controlled[j].1)) else {
        return fail(format!("no flow bins near t* = {:.1} min", 60.0 * t_star));
    };
    if controlled[spike].1 <= (1.0 + tol) * baseline[spike].1.max(tol * peak) {
        return fail(format!(
            "no release spike near t* = {:.1} min (controlled {:.0} vs baseline {:.0} veh/h)",
            60.0 * t_star,
            controlled[spike].1,
            baseline[spike].1
        ));
    }
    // After the spike the flow must settle and stay settled.
    let settled = (spike + 1..controlled.len()).find(|&i| within(baseline[i].1, controlled[i].1));
    let Some(settled) = settled else {
        return fail("controlled flow never returns to the uncontrolled flow".into());
    };
    if controlled[settled].0 - t_star > spike_window + 2.0 / 60.0 {
        return fail(format!("release lasts until {:.1} min", 60.0 * controlled[settled].0));
    }
    if let Some(i) = (settled..controlled.len()).find(|&i| !within(baseline[i].1, controlled[i].1)) {
        return fail(format!(
            "controlled flow leaves the 10% band at {:.1} min ({:.0} vs {:.0} veh/h)",
            60.0 * controlled[i].0,
            controlled[i].1,
            baseline[i].1
        ));
    }
    // A single spike: no other bin before t* exceeds the band upwards.
    if let Some(i) = (0..spike).find(|&i| controlled[i].0 < t_star - spike_window && controlled[i].1 > (1.0 + tol) * baseline[i].1.max(tol * peak)) {
        return fail(format!("second spike at {:.1} min", 60.0 * controlled[i].0));
    }
    SpikeCheck {
        pass: true,
        detail: format!(
            "spike {:.0} veh/h at {:.1} min (t* = {:.1} min), settled from {:.1} min",
            controlled[spike].1,
            60.0 * controlled[spike].0,
            60.0 * t_star,
            60.0 * controlled[settled].0
        ),
    }
}
