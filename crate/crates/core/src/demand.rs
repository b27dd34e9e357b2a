//! Demand profile, origin-destination routing with logistic detours, and the
//! deterministic arrival generator.

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::network::Reservoir;
use crate::trips::{Leg, LegClass, Trip};

/// Trip-length law of one leg class. Lengths in km.
///
/// Log-normal laws are parameterised by their mean and standard deviation in
/// km and moment-matched to the log-space parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum LengthLaw {
    Lognormal { mean_km: f64, std_km: f64 },
    Exponential { mean_km: f64 },
    Fixed { km: f64 },
}

impl LengthLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            LengthLaw::Lognormal { mean_km, .. } => mean_km,
            LengthLaw::Exponential { mean_km } => mean_km,
            LengthLaw::Fixed { km } => km,
        }
    }

    /// Log-space `(mu, sigma)` of a log-normal law with the given mean and std.
    pub fn lognormal_log_params(mean: f64, std: f64) -> (f64, f64) {
        let sigma2 = (1.0 + (std / mean).powi(2)).ln();
        (mean.ln() - 0.5 * sigma2, sigma2.sqrt())
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        let ok = match *self {
            LengthLaw::Lognormal { mean_km, std_km } => {
                mean_km > 0.0 && mean_km.is_finite() && std_km >= 0.0 && std_km.is_finite()
            }
            LengthLaw::Exponential { mean_km } => mean_km > 0.0 && mean_km.is_finite(),
            LengthLaw::Fixed { km } => km > 0.0 && km.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("lengths must be positive and finite: {self:?}"))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            LengthLaw::Lognormal { mean_km, std_km } => {
                if std_km == 0.0 {
                    return mean_km;
                }
                let (mu, sigma) = Self::lognormal_log_params(mean_km, std_km);
                LogNormal::new(mu, sigma)
                    .expect("validated log-normal parameters")
                    .sample(rng)
            }
            LengthLaw::Exponential { mean_km } => Exp::new(1.0 / mean_km)
                .expect("validated exponential scale")
                .sample(rng),
            LengthLaw::Fixed { km } => km,
        }
    }

    /// Quantile function, `p` in (0, 1).
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            LengthLaw::Lognormal { mean_km, std_km } => {
                if std_km == 0.0 {
                    return mean_km;
                }
                let (mu, sigma) = Self::lognormal_log_params(mean_km, std_km);
                let z = Normal::standard().inverse_cdf(p);
                (mu + sigma * z).exp()
            }
            LengthLaw::Exponential { mean_km } => -mean_km * (1.0 - p).ln(),
            LengthLaw::Fixed { km } => km,
        }
    }
}

impl LengthLaw {
    /// Conditional means of the `k` equal-probability strata of the law,
    /// in increasing order. Their average equals the law's mean exactly.
    pub fn stratum_means(&self, k: usize) -> Vec<f64> {
        assert!(k > 0, "at least one stratum");
        let kf = k as f64;
        match *self {
            LengthLaw::Fixed { km } => vec![km; k],
            LengthLaw::Lognormal { mean_km, std_km } if std_km == 0.0 => vec![mean_km; k],
            LengthLaw::Lognormal { mean_km, std_km } => {
                let (_, sigma) = Self::lognormal_log_params(mean_km, std_km);
                let normal = Normal::standard();
                let shifted_cdf = |i: usize| -> f64 {
                    if i == 0 {
                        0.0
                    } else if i == k {
                        1.0
                    } else {
                        normal.cdf(normal.inverse_cdf(i as f64 / kf) - sigma)
                    }
                };
                (0..k)
                    .map(|i| kf * mean_km * (shifted_cdf(i + 1) - shifted_cdf(i)))
                    .collect()
            }
            LengthLaw::Exponential { mean_km } => {
                // Partial expectation of X above the quantile x: (x + m) e^{-x/m}.
                let upper = |i: usize| -> f64 {
                    if i == k {
                        0.0
                    } else {
                        let x = -mean_km * (1.0 - i as f64 / kf).ln();
                        (x + mean_km) * (-x / mean_km).exp()
                    }
                };
                (0..k).map(|i| kf * (upper(i) - upper(i + 1))).collect()
            }
        }
    }
}

/// Length laws per leg class. A class is only required when some route with
/// positive probability uses it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripLengths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_internal: Option<LengthLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_internal: Option<LengthLaw>,
    /// Leg in A of a trip heading to B.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_outbound: Option<LengthLaw>,
    /// Leg in B of a trip that came from A.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_inbound: Option<LengthLaw>,
    /// Leg in B of a trip heading to A.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_outbound: Option<LengthLaw>,
    /// Leg in A of a trip that came from B.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_inbound: Option<LengthLaw>,
}

impl TripLengths {
    pub fn get(&self, class: LegClass) -> Option<&LengthLaw> {
        match class {
            LegClass::AInternal => self.a_internal.as_ref(),
            LegClass::BInternal => self.b_internal.as_ref(),
            LegClass::AOutbound => self.a_outbound.as_ref(),
            LegClass::BInbound => self.b_inbound.as_ref(),
            LegClass::BOutbound => self.b_outbound.as_ref(),
            LegClass::AInbound => self.a_inbound.as_ref(),
        }
    }

    pub(crate) fn law(&self, class: LegClass) -> &LengthLaw {
        self.get(class)
            .unwrap_or_else(|| panic!("trip-length class {class:?} not configured"))
    }
}

/// Piece of the piecewise-constant total inflow profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandPiece {
    pub start_min: f64,
    pub rate_veh_h: f64,
}

/// Row of the OD share matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShareRow {
    #[serde(rename = "A")]
    pub to_a: f64,
    #[serde(rename = "B")]
    pub to_b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdShares {
    #[serde(rename = "A")]
    pub from_a: ShareRow,
    #[serde(rename = "B")]
    pub from_b: ShareRow,
}

impl OdShares {
    pub fn row(&self, origin: Reservoir) -> ShareRow {
        match origin {
            Reservoir::A => self.from_a,
            Reservoir::B => self.from_b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerReservoir {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
}

impl PerReservoir {
    pub fn get(&self, r: Reservoir) -> f64 {
        match r {
            Reservoir::A => self.a,
            Reservoir::B => self.b,
        }
    }
}

fn default_ceiling() -> PerReservoir {
    PerReservoir {
        a: f64::INFINITY,
        b: f64::INFINITY,
    }
}

fn is_unbounded(c: &PerReservoir) -> bool {
    c.a.is_infinite() && c.b.is_infinite()
}

/// Exogenous demand: when vehicles enter, where they enter, where they go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandModel {
    /// Total inflow (veh/h), piecewise constant; pieces sorted by start time.
    pub profile: Vec<DemandPiece>,
    /// Fraction of the total inflow originating in A.
    pub share_a: f64,
    pub od_shares: OdShares,
    #[serde(default)]
    pub detour_enabled: bool,
    #[serde(default)]
    pub detour_elasticity: f64,
    pub trip_lengths: TripLengths,
    /// Bound on the controller's forecast error (veh/h).
    #[serde(default)]
    pub forecast_error_bound: f64,
    /// Demand envelope per origin (veh/h).
    #[serde(default = "default_ceiling", skip_serializing_if = "is_unbounded")]
    pub demand_ceiling: PerReservoir,
}

impl DemandModel {
    /// Total inflow rate (veh/h) at time `t` (h).
    pub fn total_rate(&self, t: f64) -> f64 {
        let t_min = t * 60.0;
        self.profile
            .iter()
            .rev()
            .find(|p| p.start_min <= t_min)
            .map_or(0.0, |p| p.rate_veh_h)
    }

    /// Entry rate (veh/h) at origin `r`.
    pub fn origin_rate(&self, r: Reservoir, t: f64) -> f64 {
        self.total_rate(t) * self.origin_share(r)
    }

    pub fn origin_share(&self, r: Reservoir) -> f64 {
        match r {
            Reservoir::A => self.share_a,
            Reservoir::B => 1.0 - self.share_a,
        }
    }

    /// Exact number of vehicles entering during `[t0, t1)` (h).
    pub fn vehicles_between(&self, t0: f64, t1: f64) -> f64 {
        let (m0, m1) = (t0 * 60.0, t1 * 60.0);
        let mut total = 0.0;
        for (i, p) in self.profile.iter().enumerate() {
            let end = self.profile.get(i + 1).map_or(f64::INFINITY, |n| n.start_min);
            let lo = p.start_min.max(m0);
            let hi = end.min(m1);
            if hi > lo {
                total += p.rate_veh_h * (hi - lo) / 60.0;
            }
        }
        total
    }

    /// Time (h) after which the profile is identically zero.
    pub fn end_of_demand(&self) -> f64 {
        let mut end = 0.0;
        for (i, p) in self.profile.iter().enumerate() {
            if p.rate_veh_h > 0.0 {
                end = self.profile.get(i + 1).map_or(f64::INFINITY, |n| n.start_min / 60.0);
            }
        }
        end
    }

    /// Detour fractions under the current speeds; zero when detours are disabled.
    pub fn detours(&self, v_a: f64, v_b: f64) -> (f64, f64) {
        if self.detour_enabled {
            detour_fractions(v_a, v_b, self.detour_elasticity)
        } else {
            (0.0, 0.0)
        }
    }

    /// Route probabilities for a vehicle entering at `origin`.
    pub fn routes(&self, origin: Reservoir, v_a: f64, v_b: f64) -> [(Route, f64); 3] {
        let row = self.od_shares.row(origin);
        let (delta_a, delta_b) = self.detours(v_a, v_b);
        match origin {
            Reservoir::A => [
                (Route::AToB, row.to_b),
                (Route::ADetour, row.to_a * delta_a),
                (Route::AInternal, row.to_a * (1.0 - delta_a)),
            ],
            Reservoir::B => [
                (Route::BToA, row.to_a),
                (Route::BDetour, row.to_b * delta_b),
                (Route::BInternal, row.to_b * (1.0 - delta_b)),
            ],
        }
    }

    /// Forecast copy with every profile level shifted by `offsets` (veh/h),
    /// clipped at zero.
    pub fn perturbed(&self, offsets: &[f64]) -> DemandModel {
        let mut out = self.clone();
        for (p, off) in out.profile.iter_mut().zip(offsets) {
            p.rate_veh_h = (p.rate_veh_h + off).max(0.0);
        }
        out
    }
}

/// Route of a trip through the two reservoirs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Route {
    AInternal,
    AToB,
    /// A to A through B.
    ADetour,
    BInternal,
    BToA,
    /// B to B through A.
    BDetour,
}

impl Route {
    pub fn classes(self) -> &'static [LegClass] {
        use LegClass::*;
        match self {
            Route::AInternal => &[AInternal],
            Route::AToB => &[AOutbound, BInbound],
            Route::ADetour => &[AOutbound, BInbound, AInbound],
            Route::BInternal => &[BInternal],
            Route::BToA => &[BOutbound, AInbound],
            Route::BDetour => &[BOutbound, AInbound, BInbound],
        }
    }
}

/// Logistic detour shares `(delta_A, delta_B)`.
pub fn detour_fractions(v_a: f64, v_b: f64, elasticity: f64) -> (f64, f64) {
    let logistic = |x: f64| 1.0 / (1.0 + x.exp());
    (
        logistic(elasticity * (v_a - v_b)),
        logistic(elasticity * (v_b - v_a)),
    )
}

/// Inter-district flow requests `(d_AB, d_BA)` in veh/h.
pub fn effective_demands(d_a: f64, d_b: f64, od: &OdShares, deltas: (f64, f64)) -> (f64, f64) {
    (
        (od.from_a.to_b + deltas.0 * od.from_a.to_a) * d_a,
        (od.from_b.to_a + deltas.1 * od.from_b.to_b) * d_b,
    )
}

/// Deterministic arrival process: each origin integrates its rate and
/// releases whole vehicles, carrying the fractional remainder.
#[derive(Debug, Clone, Default)]
pub struct ArrivalGenerator {
    carry: [f64; 2],
    next_id: u64,
}

impl ArrivalGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn generated(&self) -> u64 {
        self.next_id
    }

    /// Trips entering during `[t, t + dt)`. Routes and lengths are sampled;
    /// the speeds drive the detour split.
    pub fn arrivals<R: Rng + ?Sized>(
        &mut self,
        demand: &DemandModel,
        t: f64,
        dt: f64,
        speeds: (f64, f64),
        rng: &mut R,
    ) -> Vec<Trip> {
        let total = demand.vehicles_between(t, t + dt);
        let mut out = Vec::new();
        for origin in Reservoir::ALL {
            let slot = &mut self.carry[origin.index()];
            *slot += total * demand.origin_share(origin);
            let whole = slot.floor();
            *slot -= whole;
            if whole == 0.0 {
                continue;
            }
            let routes = demand.routes(origin, speeds.0, speeds.1);
            for _ in 0..whole as u64 {
                let route = pick_route(&routes, rng.random::<f64>());
                let legs = route.classes().iter().map(|&class| {
                    Leg::new(class, demand.trip_lengths.law(class).sample(rng))
                });
                out.push(Trip::new(self.next_id, origin, legs, t));
                self.next_id += 1;
            }
        }
        out
    }
}

pub(crate) fn pick_route(routes: &[(Route, f64); 3], u: f64) -> Route {
    let mut acc = 0.0;
    for &(route, p) in routes {
        acc += p;
        if u < acc {
            return route;
        }
    }
    // Rounding in the shares: fall back to the last route with mass.
    routes
        .iter()
        .rev()
        .find(|(_, p)| *p > 0.0)
        .map_or(routes[0].0, |(r, _)| *r)
}

/// Generates trips for one step with the given generator (free-function form).
pub fn generate_arrivals<R: Rng + ?Sized>(
    generator: &mut ArrivalGenerator,
    demand: &DemandModel,
    t: f64,
    dt: f64,
    speeds: (f64, f64),
    rng: &mut R,
) -> Vec<Trip> {
    generator.arrivals(demand, t, dt, speeds, rng)
}
