//! Steady-state analysis with exponential trip lengths: the marginal-equality
//! allocation of occupancies and the resulting constant gate flows.

use crate::error::{Error, Result};
use crate::network::ReservoirParams;

/// A reservoir discharge curve `g(N)` that is increasing and concave on
/// `[0, critical_occupancy]`.
pub trait Discharge {
    /// Exit flow (veh/h) at occupancy `n`.
    fn g(&self, n: f64) -> f64;
    /// Right derivative of `g` at `n`.
    fn g_prime(&self, n: f64) -> f64;
    /// Occupancy at which `g` peaks.
    fn critical_occupancy(&self) -> f64;
}

/// `g(N) = N V(N / L) / B` with the accident-free speed of the reservoir.
impl Discharge for ReservoirParams {
    fn g(&self, n: f64) -> f64 {
        n * self.fd.speed_clamped(self.density(n)) / self.trip_scale_km
    }

    fn g_prime(&self, n: f64) -> f64 {
        self.fd.flow_slope(self.density(n)) / self.trip_scale_km
    }

    fn critical_occupancy(&self) -> f64 {
        self.fd.critical_density() * self.lane_length_km
    }
}

/// Greenshields discharge `g(N) = N v_f (1 - N / N_j) / B`, strictly concave.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Greenshields {
    pub v_f: f64,
    pub jam_occupancy: f64,
    pub trip_scale_km: f64,
}

impl Discharge for Greenshields {
    fn g(&self, n: f64) -> f64 {
        n * self.v_f * (1.0 - n / self.jam_occupancy) / self.trip_scale_km
    }

    fn g_prime(&self, n: f64) -> f64 {
        self.v_f * (1.0 - 2.0 * n / self.jam_occupancy) / self.trip_scale_km
    }

    fn critical_occupancy(&self) -> f64 {
        0.5 * self.jam_occupancy
    }
}

const BISECTION_ITERS: usize = 200;

/// Largest `N` on the uncongested branch with `g'(N) >= slope`.
fn occupancy_at_slope(d: &dyn Discharge, slope: f64) -> f64 {
    let n_c = d.critical_occupancy();
    if d.g_prime(0.0) < slope {
        return 0.0;
    }
    if d.g_prime(n_c * (1.0 - 1e-15)) >= slope {
        return n_c;
    }
    let (mut lo, mut hi) = (0.0, n_c);
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if d.g_prime(mid) >= slope {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Occupancy in `[lo, hi]` at which `g` reaches `target` (g increasing there).
fn invert_on(d: &dyn Discharge, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if d.g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Minimises `w_A N_A + w_B N_B` subject to `g_A(N_A) + g_B(N_B) = F` by
/// bisection on the shared multiplier of the weighted marginal-equality
/// conditions `g_A'(N_A) / w_A = g_B'(N_B) / w_B`. Flat stretches of `g'`
/// (piecewise-linear curves) are resolved by filling the remaining outflow
/// into the reservoir with the larger weighted marginal discharge.
pub fn solve_marginal_equality(
    curves: [&dyn Discharge; 2],
    weights: [f64; 2],
    total_flow: f64,
) -> Result<[f64; 2]> {
    let caps = [
        curves[0].g(curves[0].critical_occupancy()),
        curves[1].g(curves[1].critical_occupancy()),
    ];
    let capacity = caps[0] + caps[1];
    if total_flow >= capacity {
        return Err(Error::Infeasible {
            demand: total_flow,
            capacity,
        });
    }
    if total_flow <= 0.0 {
        return Ok([0.0; 2]);
    }
    let alloc = |nu: f64| [0, 1].map(|r| occupancy_at_slope(curves[r], nu * weights[r]));
    let outflow = |n: [f64; 2]| curves[0].g(n[0]) + curves[1].g(n[1]);

    // Larger multiplier, smaller occupancies, smaller outflow.
    let mut lo = 0.0;
    let mut hi = (0..2)
        .map(|r| curves[r].g_prime(0.0) / weights[r])
        .fold(0.0, f64::max)
        * (1.0 + 1e-9);
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if outflow(alloc(mid)) >= total_flow {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let upper = alloc(lo);
    let mut n = alloc(hi);
    let mut deficit = total_flow - outflow(n);
    let mut order = [0usize, 1];
    order.sort_by(|&x, &y| {
        let kx = curves[x].g_prime(n[x]) / weights[x];
        let ky = curves[y].g_prime(n[y]) / weights[y];
        ky.total_cmp(&kx)
    });
    for r in order {
        if deficit <= 0.0 {
            break;
        }
        let have = curves[r].g(n[r]);
        let room = curves[r].g(upper[r]) - have;
        if room <= 0.0 {
            continue;
        }
        let gain = room.min(deficit);
        n[r] = invert_on(curves[r], have + gain, n[r], upper[r]);
        deficit -= gain;
    }
    Ok(n)
}

/// Risk-neutral steady-state occupancies `(N_A*, N_B*)` for inflows `F_A`, `F_B`.
pub fn steady_state_occupancies(
    f_a: f64,
    f_b: f64,
    params_a: &ReservoirParams,
    params_b: &ReservoirParams,
) -> Result<[f64; 2]> {
    solve_marginal_equality([params_a, params_b], [1.0, 1.0], f_a + f_b)
}

/// Occupancy surcharge `sigma_r / gamma_r^2` with `sigma_r = alpha_r (gamma_r + beta_r)`.
pub fn risk_surcharge(p: &ReservoirParams) -> f64 {
    p.alpha * (p.gamma + p.beta) / (p.gamma * p.gamma)
}

/// Risk-averse occupancies solving the weighted marginal equality with
/// weights `c_T + theta sigma_r / gamma_r^2` (each reservoir uses its own decay
/// rate). At `theta = 0` this coincides with [`steady_state_occupancies`].
pub fn risk_adjusted_occupancies(
    f_a: f64,
    f_b: f64,
    params_a: &ReservoirParams,
    params_b: &ReservoirParams,
    c_t: f64,
    theta: f64,
) -> Result<[f64; 2]> {
    crate::error::ensure_domain(c_t > 0.0, "c_T", c_t, "delay weight must be > 0")?;
    crate::error::ensure_domain(theta >= 0.0, "theta", theta, "risk aversion must be >= 0")?;
    let w = [
        1.0 + theta * risk_surcharge(params_a) / c_t,
        1.0 + theta * risk_surcharge(params_b) / c_t,
    ];
    solve_marginal_equality([params_a, params_b], w, f_a + f_b)
}

/// Steady-state gate flows `(u_AB*, u_BA*)` from
/// `du = (F_A - F_B - g_A(N_A) + g_B(N_B)) / 2`, clipped to `[0, u_bar]`.
pub fn steady_state_gates(
    occupancies: [f64; 2],
    f_a: f64,
    f_b: f64,
    curves: [&dyn Discharge; 2],
    u_bar: [f64; 2],
) -> [f64; 2] {
    let du = 0.5 * (f_a - f_b - curves[0].g(occupancies[0]) + curves[1].g(occupancies[1]));
    [du.max(0.0).min(u_bar[0]), (-du).max(0.0).min(u_bar[1])]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::FundamentalDiagram;
    use approx::assert_relative_eq;

    fn res(v_f: f64, rho_j: f64, q: f64, l: f64, b: f64) -> ReservoirParams {
        ReservoirParams {
            lane_length_km: l,
            fd: FundamentalDiagram::triangular(v_f, rho_j, q).unwrap(),
            alpha: 1.5e-4,
            beta: 0.4,
            gamma: 1.2,
            eta: 0.0,
            kappa: 0.2,
            trip_scale_km: b,
        }
    }

    #[test]
    fn symmetric_reservoirs_split_evenly() {
        let g = Greenshields {
            v_f: 40.0,
            jam_occupancy: 2000.0,
            trip_scale_km: 2.5,
        };
        let n = solve_marginal_equality([&g, &g], [1.0, 1.0], 12000.0).unwrap();
        assert_relative_eq!(n[0], n[1], max_relative = 1e-9);
        assert_eq!(steady_state_gates(n, 6000.0, 6000.0, [&g, &g], [1e9; 2]), [0.0, 0.0]);
    }

    #[test]
    fn identical_triangular_reservoirs() {
        let p = res(35.0, 180.0, 1580.0, 100.0, 2.5);
        let n = steady_state_occupancies(3000.0, 3000.0, &p, &p).unwrap();
        assert_relative_eq!(p.g(n[0]) + p.g(n[1]), 6000.0, max_relative = 1e-9);
        // Linear discharge: total occupancy is F B / v_f however it is split.
        assert_relative_eq!(n[0] + n[1], 6000.0 * 2.5 / 35.0, max_relative = 1e-9);
    }

    #[test]
    fn infeasible_demand() {
        let p = res(35.0, 180.0, 1580.0, 100.0, 2.5);
        let cap = 2.0 * p.g(p.critical_occupancy());
        assert!(matches!(
            steady_state_occupancies(cap, 1.0, &p, &p),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn gate_rule_examples() {
        let zero = Greenshields {
            v_f: 1.0,
            jam_occupancy: 1.0,
            trip_scale_km: 1.0,
        };
        // F_A - F_B - g_A + g_B = 400 with g = 0.
        assert_eq!(steady_state_gates([0.0; 2], 900.0, 500.0, [&zero, &zero], [1e9; 2]), [200.0, 0.0]);
        assert_eq!(steady_state_gates([0.0; 2], 500.0, 900.0, [&zero, &zero], [1e9; 2]), [0.0, 200.0]);
        assert_eq!(steady_state_gates([0.0; 2], 900.0, 500.0, [&zero, &zero], [150.0, 1e9]), [150.0, 0.0]);
    }

    #[test]
    fn risk_neutral_reduction_is_exact() {
        let a = res(35.0, 180.0, 1580.0, 328.9, 2.71);
        let b = res(85.0, 140.0, 2350.0, 79.5, 2.69);
        let n0 = steady_state_occupancies(1800.0, 10200.0, &a, &b).unwrap();
        let nt = risk_adjusted_occupancies(1800.0, 10200.0, &a, &b, 1.0, 0.0).unwrap();
        assert_eq!(n0, nt);
    }

    fn curves() -> (Greenshields, Greenshields, ReservoirParams, ReservoirParams) {
        let ga = Greenshields {
            v_f: 35.0,
            jam_occupancy: 6000.0,
            trip_scale_km: 2.7,
        };
        let gb = Greenshields {
            v_f: 60.0,
            jam_occupancy: 3000.0,
            trip_scale_km: 2.7,
        };
        let mut pa = res(35.0, 180.0, 1580.0, 328.9, 2.7);
        let pb = res(85.0, 140.0, 2350.0, 79.5, 2.7);
        pa.alpha = 3e-3;
        (ga, gb, pa, pb)
    }

    #[test]
    fn riskier_reservoir_is_relieved() {
        let (ga, gb, pa, pb) = curves();
        assert!(risk_surcharge(&pa) > risk_surcharge(&pb));
        let solve = |theta: f64| {
            let w = [
                1.0 + theta * risk_surcharge(&pa),
                1.0 + theta * risk_surcharge(&pb),
            ];
            solve_marginal_equality([&ga, &gb], w, 20000.0).unwrap()
        };
        let n0 = solve(0.0);
        let n1 = solve(50.0);
        assert!(n1[0] < n0[0]);
        assert!(n1[0] + n1[1] >= n0[0] + n0[1]);
    }

    #[test]
    fn first_order_shift_matches_linearisation() {
        // Differentiating g_A'/w_A = g_B'/w_B along g_A + g_B = F gives
        // d(du)/dtheta = -(s_A - s_B) g'^2 / (c_T (g_A'' + g_B'')).
        let (ga, gb, pa, pb) = curves();
        let f = 20000.0;
        let (sa, sb) = (risk_surcharge(&pa), risk_surcharge(&pb));
        let solve = |theta: f64| solve_marginal_equality([&ga, &gb], [1.0 + theta * sa, 1.0 + theta * sb], f).unwrap();
        let du = |n: [f64; 2]| steady_state_gates(n, 0.5 * f, 0.5 * f, [&ga, &gb], [1e9; 2]);
        let n0 = solve(0.0);
        let gp = ga.g_prime(n0[0]);
        assert_relative_eq!(gp, gb.g_prime(n0[1]), max_relative = 1e-9);
        let g2 = |g: &Greenshields| -2.0 * g.v_f / (g.jam_occupancy * g.trip_scale_km);
        let slope = -(sa - sb) * gp * gp / (g2(&ga) + g2(&gb));
        let theta = 1e-2;
        let net = |d: [f64; 2]| d[0] - d[1];
        let shift = net(du(solve(theta))) - net(du(n0));
        assert_relative_eq!(shift, slope * theta, max_relative = 1e-2);
        assert!(shift > 0.0, "more flow leaves the riskier reservoir");
    }
}
