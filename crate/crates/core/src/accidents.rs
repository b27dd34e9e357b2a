//! Self-exciting accident process: intensity, live load, per-step sampling,
//! moment propagation and the forward-equation validator.

use rand::Rng;

use crate::error::{Error, Result};
use crate::network::ReservoirParams;

/// Per-step event probability above which the Bernoulli discretisation of the
/// point process is considered too coarse.
pub const COARSE_STEP_WARNING: f64 = 0.1;

/// Accident intensity `alpha N + beta a + eta |v_A - v_B|` (1/h).
pub fn intensity(n: f64, load: f64, v_a: f64, v_b: f64, params: &ReservoirParams) -> f64 {
    params.alpha * n + params.beta * load + params.eta * (v_a - v_b).abs()
}

/// Exponential decay of the live load over `dt` hours.
pub fn decay_load(load: f64, gamma: f64, dt: f64) -> f64 {
    load * (-gamma * dt).exp()
}

/// Number of events (0 or 1) in a step of length `dt` at intensity `lambda`.
///
/// One uniform is always consumed so that the stream stays aligned across
/// policies that produce different intensities.
pub fn sample_accidents<R: Rng + ?Sized>(lambda: f64, dt: f64, rng: &mut R) -> u32 {
    let p = -(-lambda * dt).exp_m1();
    if lambda * dt > COARSE_STEP_WARNING {
        log::warn!("lambda*dt = {:.3} is too coarse for per-step accident sampling", lambda * dt);
    }
    let u: f64 = rng.random();
    u32::from(u < p)
}

/// Hawkes state of one reservoir.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HawkesState {
    /// Intensity used in the most recent step (1/h).
    pub lambda: f64,
    /// Live-accident load.
    pub load: f64,
    pub n_acc: u32,
    /// Accident times (h).
    pub event_times: Vec<f64>,
}

impl HawkesState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Samples the step `[t, t + dt)` given the load-free part of the
    /// intensity. Events are stamped at the step midpoint; the load decays
    /// over the first half-step, jumps, then decays over the second half.
    /// Returns the event time, if any.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        base: f64,
        params: &ReservoirParams,
        t: f64,
        dt: f64,
        rng: &mut R,
    ) -> Option<f64> {
        self.lambda = base + params.beta * self.load;
        let k = sample_accidents(self.lambda, dt, rng);
        self.load = decay_load(self.load, params.gamma, 0.5 * dt);
        let event = (k > 0).then(|| {
            let te = t + 0.5 * dt;
            self.record(te);
            te
        });
        self.load = decay_load(self.load, params.gamma, 0.5 * dt);
        event
    }

    /// Adds an accident at time `t` (no decay applied).
    pub fn record(&mut self, t: f64) {
        self.load += 1.0;
        self.n_acc += 1;
        self.event_times.push(t);
    }

    /// Live load recomputed from the full event history.
    pub fn load_from_history(&self, now: f64, gamma: f64) -> f64 {
        self.event_times
            .iter()
            .filter(|&&ti| ti <= now)
            .map(|&ti| (-gamma * (now - ti)).exp())
            .sum()
    }
}

/// Running first and second moments of the accident count since the last reset.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MomentState {
    pub m: f64,
    pub s: f64,
}

impl MomentState {
    pub fn variance(&self) -> f64 {
        self.s - self.m * self.m
    }

    /// One explicit Euler step with total intensity `lambda_a + lambda_b`.
    pub fn step(&mut self, lambda_a: f64, lambda_b: f64, dt: f64) {
        let total = (lambda_a + lambda_b) * dt;
        self.s += (2.0 * self.m + 1.0) * total;
        self.m += total;
    }
}

/// Free-function form of [`MomentState::step`].
pub fn moment_step(mom: MomentState, lambda_a: f64, lambda_b: f64, dt: f64) -> MomentState {
    let mut out = mom;
    out.step(lambda_a, lambda_b, dt);
    out
}

/// Largest tolerated probability mass escaping past `n_max`.
pub const MAX_TAIL_MASS: f64 = 1e-8;

/// Solves the forward equations `p_n' = lambda(t)(p_{n-1} - p_n)` on `[0, T]`
/// with classical RK4, starting from `p_0 = 1`. Mass flowing out of `n_max`
/// is tracked; exceeding [`MAX_TAIL_MASS`] is an error.
pub fn kolmogorov_forward(
    lambda_path: impl Fn(f64) -> f64,
    n_max: usize,
    horizon: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    crate::error::ensure_domain(dt > 0.0, "dt", dt, "step must be positive")?;
    crate::error::ensure_domain(horizon >= 0.0, "T", horizon, "horizon must be non-negative")?;
    let steps = (horizon / dt).ceil().max(1.0) as usize;
    let h = horizon / steps as f64;
    let dim = n_max + 1;
    let mut p = vec![0.0; dim];
    p[0] = 1.0;

    let rhs = |lambda: f64, p: &[f64], out: &mut [f64]| {
        out[0] = -lambda * p[0];
        for n in 1..p.len() {
            out[n] = lambda * (p[n - 1] - p[n]);
        }
    };
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    for i in 0..steps {
        let t = i as f64 * h;
        let (l0, lm, l1) = (lambda_path(t), lambda_path(t + 0.5 * h), lambda_path(t + h));
        rhs(l0, &p, &mut k1);
        for n in 0..dim {
            tmp[n] = p[n] + 0.5 * h * k1[n];
        }
        rhs(lm, &tmp, &mut k2);
        for n in 0..dim {
            tmp[n] = p[n] + 0.5 * h * k2[n];
        }
        rhs(lm, &tmp, &mut k3);
        for n in 0..dim {
            tmp[n] = p[n] + h * k3[n];
        }
        rhs(l1, &tmp, &mut k4);
        for n in 0..dim {
            p[n] += h / 6.0 * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n]);
        }
    }
    let leaked = 1.0 - p.iter().sum::<f64>();
    if leaked > MAX_TAIL_MASS {
        return Err(Error::TailMass { leaked, n_max });
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::FundamentalDiagram;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{Discrete, Poisson};

    fn params(alpha: f64, beta: f64, gamma: f64, eta: f64) -> ReservoirParams {
        ReservoirParams {
            lane_length_km: 328.9,
            fd: FundamentalDiagram::triangular(35.0, 180.0, 1580.0).unwrap(),
            alpha,
            beta,
            gamma,
            eta,
            kappa: 0.2,
            trip_scale_km: 2.71,
        }
    }

    #[test]
    fn intensity_examples() {
        let p = params(1.5e-4, 0.4, 1.2, 0.01);
        assert_eq!(intensity(0.0, 0.0, 30.0, 30.0, &p), 0.0);
        assert_relative_eq!(intensity(1000.0, 0.0, 30.0, 30.0, &p), 0.15, max_relative = 1e-12);
        let q = params(0.0, 0.4, 1.2, 0.0);
        assert_relative_eq!(intensity(500.0, 1.0, 10.0, 80.0, &q), 0.40, max_relative = 1e-12);
    }

    #[test]
    fn decay_examples() {
        assert_relative_eq!(decay_load(1.0, 1.2, 1.0), 0.301_194_211_912_202, max_relative = 1e-12);
        assert_eq!(decay_load(0.7, 1.2, 0.0), 0.7);
        assert_eq!(decay_load(0.0, 1.2, 3.0), 0.0);
    }

    #[test]
    fn bernoulli_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!((0..10_000).all(|_| sample_accidents(0.0, 1.0 / 3600.0, &mut rng) == 0));
        let p = -(-6.0f64 / 3600.0).exp_m1();
        assert_relative_eq!(p, 1.666e-3, max_relative = 1e-3);
        let n = 1_000_000;
        let hits: u32 = (0..n).map(|_| sample_accidents(6.0, 1.0 / 3600.0, &mut rng)).sum();
        let mean = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((mean - p).abs() < 3.0 * se, "mean {mean} vs {p}");
    }

    #[test]
    fn kolmogorov_matches_poisson() {
        let (lambda, horizon) = (3.0, 2.0);
        let p = kolmogorov_forward(|_| lambda, 40, horizon, 1e-3).unwrap();
        let pois = Poisson::new(lambda * horizon).unwrap();
        let err = p
            .iter()
            .enumerate()
            .map(|(n, &pn)| (pn - pois.pmf(n as u64)).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "max error {err}");
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn kolmogorov_zero_rate_and_tail_error() {
        let p = kolmogorov_forward(|_| 0.0, 5, 1.0, 0.01).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(matches!(
            kolmogorov_forward(|_| 20.0, 5, 1.0, 0.01),
            Err(Error::TailMass { .. })
        ));
    }

    #[test]
    fn kolmogorov_time_varying_mass() {
        let p = kolmogorov_forward(|t| 2.0 + (3.0 * t).sin(), 60, 3.0, 1e-3).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        // Inhomogeneous Poisson with integrated rate 6 + (1 - cos 9)/3.
        let pois = Poisson::new(6.0 + (1.0 - 9f64.cos()) / 3.0).unwrap();
        for (n, &pn) in p.iter().enumerate().take(30) {
            assert!((pn - pois.pmf(n as u64)).abs() < 1e-6);
        }
    }

    #[test]
    fn moments_constant_rate() {
        let mut mom = MomentState::default();
        assert_eq!(moment_step(mom, 0.0, 0.0, 0.1), MomentState::default());
        let (la, lb, dt) = (2.0, 1.0, 1e-4);
        let steps = 20_000;
        for _ in 0..steps {
            mom.step(la, lb, dt);
        }
        let total = 3.0 * 2.0;
        assert_relative_eq!(mom.m, total, max_relative = 1e-9);
        // Explicit Euler leaves an O(Lambda dt) bias in the variance.
        assert_relative_eq!(mom.variance(), total, max_relative = 1e-3);
    }

    #[test]
    fn recursive_load_matches_history() {
        let p = params(0.0, 0.4, 1.2, 0.0);
        let mut h = HawkesState::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dt = 1.0 / 3600.0;
        let mut worst: f64 = 0.0;
        for k in 0..36_000 {
            let t = k as f64 * dt;
            h.step(30.0, &p, t, dt, &mut rng);
            worst = worst.max((h.load - h.load_from_history(t + dt, p.gamma)).abs());
        }
        assert!(h.n_acc > 50);
        assert_eq!(h.n_acc as usize, h.event_times.len());
        assert!(worst < 1e-9, "max deviation {worst}");
    }

    #[test]
    fn subcritical_cluster_rate() {
        // Frozen exposure: base rate alpha*N = 3/h, beta = 0.4, gamma = 1.2.
        let p = params(0.0, 0.4, 1.2, 0.0);
        let mut h = HawkesState::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dt = 1.0 / 360.0;
        let steps = 1_000_000;
        for k in 0..steps {
            h.step(3.0, &p, k as f64 * dt, dt, &mut rng);
        }
        let rate = h.n_acc as f64 / (steps as f64 * dt);
        let expected = 3.0 * 1.2 / (1.2 - 0.4);
        assert!((rate / expected - 1.0).abs() < 0.05, "rate {rate} vs {expected}");
    }

    proptest! {
        #[test]
        fn moment_variance_is_nonnegative(rates in proptest::collection::vec((0.0..20.0f64, 0.0..20.0f64), 1..200)) {
            let mut mom = MomentState::default();
            for (a, b) in rates {
                mom.step(a, b, 1.0 / 60.0);
                prop_assert!(mom.variance() >= -1e-12);
                prop_assert!(mom.s >= mom.m * mom.m - 1e-12);
            }
        }

        #[test]
        fn forward_mass_is_conserved(a in 0.0..3.0f64, b in 0.0..3.0f64, w in 0.1..5.0f64) {
            let p = kolmogorov_forward(|t| a + b * (w * t).cos().abs(), 60, 2.0, 2e-3).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&x| x > -1e-12));
        }
    }
}
