//! Static reservoir descriptions: speed-density relations, the network
//! fundamental diagram, and the accident degradation coupling.
//!
//! Densities are vehicles per lane-km. A reservoir with `N` active trips and
//! lane length `L` has density `N / L`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_domain, Error, Result};

/// Relative tolerance used when checking the continuity identities of a diagram.
const CONTINUITY_RTOL: f64 = 1e-6;

/// One of the two aggregated sub-networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Reservoir {
    A,
    B,
}

impl Reservoir {
    pub const ALL: [Reservoir; 2] = [Reservoir::A, Reservoir::B];

    pub fn index(self) -> usize {
        match self {
            Reservoir::A => 0,
            Reservoir::B => 1,
        }
    }

    pub fn other(self) -> Reservoir {
        match self {
            Reservoir::A => Reservoir::B,
            Reservoir::B => Reservoir::A,
        }
    }
}

impl fmt::Display for Reservoir {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reservoir::A => f.write_str("A"),
            Reservoir::B => f.write_str("B"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagramShape {
    Triangular,
    Trapezoidal,
}

/// Speed-density relation of a reservoir.
///
/// Only `(v_f, rho_j, q_max)` (plus `rho_2` for the trapezoidal shape) are
/// independent; the critical density and wave speed are derived so that the
/// flow curve is continuous: `q_max = v_f * rho_c = w * (rho_j - rho_2)` with
/// `rho_2 = rho_c` for the triangular shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DiagramRepr", into = "DiagramRepr")]
pub struct FundamentalDiagram {
    shape: DiagramShape,
    free_flow_speed: f64,
    wave_speed: f64,
    critical_density: f64,
    second_density: f64,
    jam_density: f64,
    capacity: f64,
}

/// Serialized form. Derived quantities are optional on input and checked for
/// consistency when present.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagramRepr {
    shape: DiagramShape,
    v_f: f64,
    rho_j: f64,
    q_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rho_2: Option<f64>,
    #[serde(default)]
    rho_c: Option<f64>,
    #[serde(default)]
    w: Option<f64>,
}

impl TryFrom<DiagramRepr> for FundamentalDiagram {
    type Error = String;

    fn try_from(r: DiagramRepr) -> std::result::Result<Self, String> {
        let fd = match r.shape {
            DiagramShape::Triangular => {
                if r.rho_2.is_some() {
                    return Err("rho_2 is only meaningful for the trapezoidal shape".into());
                }
                FundamentalDiagram::triangular(r.v_f, r.rho_j, r.q_max)
            }
            DiagramShape::Trapezoidal => {
                let rho_2 = r.rho_2.ok_or("trapezoidal diagram requires rho_2")?;
                FundamentalDiagram::trapezoidal(r.v_f, rho_2, r.rho_j, r.q_max)
            }
        }
        .map_err(|e| e.to_string())?;

        let close = |a: f64, b: f64| (a - b).abs() <= CONTINUITY_RTOL * b.abs().max(1.0);
        if let Some(rho_c) = r.rho_c {
            if !close(rho_c, fd.critical_density) {
                return Err(format!(
                    "rho_c = {rho_c} inconsistent with q_max / v_f = {}",
                    fd.critical_density
                ));
            }
        }
        if let Some(w) = r.w {
            if !close(w, fd.wave_speed) {
                return Err(format!(
                    "w = {w} inconsistent with q_max / (rho_j - rho_2) = {}",
                    fd.wave_speed
                ));
            }
        }
        Ok(fd)
    }
}

impl From<FundamentalDiagram> for DiagramRepr {
    fn from(fd: FundamentalDiagram) -> Self {
        DiagramRepr {
            shape: fd.shape,
            v_f: fd.free_flow_speed,
            rho_j: fd.jam_density,
            q_max: fd.capacity,
            rho_2: (fd.shape == DiagramShape::Trapezoidal).then_some(fd.second_density),
            rho_c: Some(fd.critical_density),
            w: Some(fd.wave_speed),
        }
    }
}

impl FundamentalDiagram {
    /// Triangular diagram from free-flow speed, jam density and capacity.
    pub fn triangular(v_f: f64, rho_j: f64, q_max: f64) -> Result<Self> {
        ensure_domain(v_f > 0.0 && v_f.is_finite(), "v_f", v_f, "must be positive")?;
        ensure_domain(rho_j > 0.0 && rho_j.is_finite(), "rho_j", rho_j, "must be positive")?;
        ensure_domain(q_max > 0.0 && q_max.is_finite(), "q_max", q_max, "must be positive")?;
        let rho_c = q_max / v_f;
        ensure_domain(rho_c < rho_j, "rho_c", rho_c, "q_max / v_f must be below rho_j")?;
        Ok(FundamentalDiagram {
            shape: DiagramShape::Triangular,
            free_flow_speed: v_f,
            wave_speed: q_max / (rho_j - rho_c),
            critical_density: rho_c,
            second_density: rho_c,
            jam_density: rho_j,
            capacity: q_max,
        })
    }

    /// Trapezoidal diagram: free flow up to `rho_1 = q_max / v_f`, capacity
    /// plateau up to `rho_2`, then linear decline to jam.
    pub fn trapezoidal(v_f: f64, rho_2: f64, rho_j: f64, q_max: f64) -> Result<Self> {
        let mut fd = Self::triangular(v_f, rho_j, q_max)?;
        ensure_domain(
            rho_2 > fd.critical_density && rho_2 < rho_j,
            "rho_2",
            rho_2,
            "must lie strictly between rho_1 and rho_j",
        )?;
        fd.shape = DiagramShape::Trapezoidal;
        fd.second_density = rho_2;
        fd.wave_speed = q_max / (rho_j - rho_2);
        Ok(fd)
    }

    pub fn shape(&self) -> DiagramShape {
        self.shape
    }
    pub fn free_flow_speed(&self) -> f64 {
        self.free_flow_speed
    }
    pub fn wave_speed(&self) -> f64 {
        self.wave_speed
    }
    pub fn critical_density(&self) -> f64 {
        self.critical_density
    }
    pub fn second_density(&self) -> f64 {
        self.second_density
    }
    pub fn jam_density(&self) -> f64 {
        self.jam_density
    }
    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    fn check_density(&self, rho: f64) -> Result<()> {
        ensure_domain(
            (0.0..=self.jam_density).contains(&rho),
            "rho",
            rho,
            "density must lie in [0, rho_j]",
        )
    }

    /// Speed without the domain check; densities outside `[0, rho_j]` are clamped.
    pub(crate) fn speed_clamped(&self, rho: f64) -> f64 {
        let rho = rho.clamp(0.0, self.jam_density);
        if rho <= self.critical_density {
            self.free_flow_speed
        } else if rho < self.second_density {
            self.capacity / rho
        } else {
            self.wave_speed * (self.jam_density - rho) / rho
        }
    }

    /// Speed in km/h at density `rho`.
    pub fn speed(&self, rho: f64) -> Result<f64> {
        self.check_density(rho)?;
        Ok(self.speed_clamped(rho))
    }

    /// Flow `rho * V(rho)` in veh/h/lane.
    pub fn flow(&self, rho: f64) -> Result<f64> {
        Ok(rho * self.speed(rho)?)
    }

    /// Right derivative of the flow curve, `dQ/drho` at `rho`.
    pub fn flow_slope(&self, rho: f64) -> f64 {
        if rho < self.critical_density {
            self.free_flow_speed
        } else if rho < self.second_density {
            0.0
        } else {
            -self.wave_speed
        }
    }
}

/// Physical and stochastic calibration of one reservoir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirParams {
    /// Cumulative lane length (lane-km).
    pub lane_length_km: f64,
    pub fd: FundamentalDiagram,
    /// Exposure coefficient (1/h per vehicle).
    pub alpha: f64,
    /// Self-excitation gain.
    pub beta: f64,
    /// Excitation decay rate (1/h).
    pub gamma: f64,
    /// Speed-dispersion coefficient (1/h per km/h).
    pub eta: f64,
    /// Accident impact coefficient.
    pub kappa: f64,
    /// Scale of the exponential trip-length law used by the steady-state analysis (km).
    pub trip_scale_km: f64,
}

impl ReservoirParams {
    /// Checks the parameter invariants, reporting the first violated field.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let nonneg = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("kappa", self.kappa),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err((name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.lane_length_km > 0.0 && self.lane_length_km.is_finite()) {
            return Err(("lane_length_km", format!("must be > 0, got {}", self.lane_length_km)));
        }
        if !(self.trip_scale_km > 0.0 && self.trip_scale_km.is_finite()) {
            return Err(("trip_scale_km", format!("must be > 0, got {}", self.trip_scale_km)));
        }
        if self.gamma <= self.beta {
            return Err((
                "gamma",
                format!(
                    "stationarity requires gamma > beta, got gamma = {} and beta = {}",
                    self.gamma, self.beta
                ),
            ));
        }
        Ok(())
    }

    /// Occupancy at jam density.
    pub fn jam_occupancy(&self) -> f64 {
        self.fd.jam_density() * self.lane_length_km
    }

    pub fn density(&self, occupancy: f64) -> f64 {
        occupancy / self.lane_length_km
    }

    /// Accident-free speed at `occupancy`, failing with [`Error::Gridlock`] above jam.
    pub fn speed_at(&self, reservoir: Reservoir, occupancy: f64) -> Result<f64> {
        let rho = self.density(occupancy);
        if rho > self.fd.jam_density() {
            return Err(Error::Gridlock {
                reservoir,
                density: rho,
                jam: self.fd.jam_density(),
            });
        }
        Ok(self.fd.speed_clamped(rho))
    }
}

/// Live accident load of a reservoir and the resulting capacity factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationState {
    pub load: f64,
    pub factor: f64,
}

impl DegradationState {
    pub fn new(load: f64, kappa: f64) -> Self {
        DegradationState {
            load,
            factor: 1.0 / (1.0 + kappa * load),
        }
    }

    pub fn intact() -> Self {
        DegradationState {
            load: 0.0,
            factor: 1.0,
        }
    }
}

/// The two reservoirs of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    #[serde(rename = "A")]
    pub a: ReservoirParams,
    #[serde(rename = "B")]
    pub b: ReservoirParams,
}

impl Network {
    pub fn get(&self, r: Reservoir) -> &ReservoirParams {
        match r {
            Reservoir::A => &self.a,
            Reservoir::B => &self.b,
        }
    }

    pub fn get_mut(&mut self, r: Reservoir) -> &mut ReservoirParams {
        match r {
            Reservoir::A => &mut self.a,
            Reservoir::B => &mut self.b,
        }
    }

    /// Largest free-flow speed of the two reservoirs.
    pub fn max_free_flow_speed(&self) -> f64 {
        self.a.fd.free_flow_speed().max(self.b.fd.free_flow_speed())
    }
}

/// Speed at density `rho` (km/h).
pub fn speed(rho: f64, fd: &FundamentalDiagram) -> Result<f64> {
    fd.speed(rho)
}

/// Flow at density `rho` (veh/h/lane).
pub fn flow(rho: f64, fd: &FundamentalDiagram) -> Result<f64> {
    fd.flow(rho)
}

/// Capacity reduction factor `1 / (1 + kappa * a)`.
pub fn degradation_factor(load: f64, kappa: f64) -> Result<f64> {
    ensure_domain(load >= 0.0, "a", load, "live load must be >= 0")?;
    ensure_domain(kappa >= 0.0, "kappa", kappa, "impact coefficient must be >= 0")?;
    Ok(1.0 / (1.0 + kappa * load))
}

/// Accident-adjusted speed `chi * V(rho)`.
pub fn effective_speed(rho: f64, fd: &FundamentalDiagram, chi: f64) -> Result<f64> {
    ensure_domain(chi > 0.0 && chi <= 1.0, "chi", chi, "factor must lie in (0, 1]")?;
    Ok(chi * fd.speed(rho)?)
}
