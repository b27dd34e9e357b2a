//! Expected-dynamics (fluid) model of the two-reservoir system.
//!
//! Each arrival cohort is split into `K` equal-weight particles whose leg
//! lengths are the conditional means of the `K` equal-probability strata of
//! the leg's trip-length law. Multi-leg cohorts pair strata across legs with a
//! fixed permutation. Accident jumps are replaced by their intensity: the
//! live load follows `da/dt = -gamma a + lambda` and the intensities feed the
//! moment accumulators. The model is deterministic; it serves both as the
//! controller's prediction model and as a deterministic plant.

use std::collections::VecDeque;

use crate::accidents::{intensity, MomentState};
use crate::bathtub::{Gate, GateControls, SystemState};
use crate::demand::{DemandModel, Route};
use crate::error::{ensure_domain, Result};
use crate::network::{Network, Reservoir};
use crate::trips::LegClass;

/// Default number of strata per cohort.
pub const DEFAULT_STRATA: usize = 12;

/// Default prediction step (h): 10 s.
pub const DEFAULT_STEP: f64 = 10.0 / 3600.0;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Particle {
    weight: f64,
    legs: [(Reservoir, f64); 3],
    n_legs: u8,
    current: u8,
}

impl Particle {
    fn remaining(&mut self) -> &mut f64 {
        &mut self.legs[self.current as usize].1
    }

    fn is_last_leg(&self) -> bool {
        self.current + 1 == self.n_legs
    }
}

/// Static description of the fluid model.
#[derive(Debug, Clone)]
pub struct FluidModel {
    pub net: Network,
    pub demand: DemandModel,
    pub gate_capacity: [f64; 2],
    /// Prediction step (h).
    pub dt: f64,
    strata: usize,
    /// Stratum means per leg class, indexed by [`class_slot`].
    lengths: [Vec<f64>; 6],
    /// Class means used for not-yet-started legs of measured trips.
    class_means: [f64; 6],
    /// Stratum permutation per leg position.
    pairing: [Vec<usize>; 3],
}

fn class_slot(c: LegClass) -> usize {
    match c {
        LegClass::AInternal => 0,
        LegClass::BInternal => 1,
        LegClass::AOutbound => 2,
        LegClass::BInbound => 3,
        LegClass::BOutbound => 4,
        LegClass::AInbound => 5,
    }
}

const ALL_CLASSES: [LegClass; 6] = [
    LegClass::AInternal,
    LegClass::BInternal,
    LegClass::AOutbound,
    LegClass::BInbound,
    LegClass::BOutbound,
    LegClass::AInbound,
];

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl FluidModel {
    pub fn new(net: Network, demand: DemandModel, gate_capacity: [f64; 2]) -> Self {
        Self::with_resolution(net, demand, gate_capacity, DEFAULT_STRATA, DEFAULT_STEP)
    }

    pub fn with_resolution(
        net: Network,
        demand: DemandModel,
        gate_capacity: [f64; 2],
        strata: usize,
        dt: f64,
    ) -> Self {
        assert!(strata > 0 && dt > 0.0);
        let mut lengths: [Vec<f64>; 6] = Default::default();
        let mut class_means = [0.0; 6];
        for c in ALL_CLASSES {
            if let Some(law) = demand.trip_lengths.get(c) {
                lengths[class_slot(c)] = law.stratum_means(strata);
                class_means[class_slot(c)] = law.mean();
            }
        }
        // Leg j uses stratum (step^j * i + j) mod K with step coprime to K,
        // which decorrelates the strata of consecutive legs.
        let mut step = ((strata as f64) * 0.618).round().max(1.0) as usize;
        while gcd(step, strata) != 1 {
            step += 1;
        }
        let mut mult = 1;
        let pairing = std::array::from_fn(|j| {
            let perm = (0..strata).map(|i| (mult * i + j) % strata).collect();
            mult = (mult * step) % strata.max(1);
            if strata == 1 {
                mult = 1;
            }
            perm
        });
        FluidModel {
            net,
            demand,
            gate_capacity,
            dt,
            strata,
            lengths,
            class_means,
            pairing,
        }
    }

    pub fn strata(&self) -> usize {
        self.strata
    }

    fn cohort(&self, route: Route, mass: f64, out: &mut Vec<Particle>) {
        let classes = route.classes();
        let w = mass / self.strata as f64;
        for i in 0..self.strata {
            let mut legs = [(Reservoir::A, 0.0); 3];
            for (j, &c) in classes.iter().enumerate() {
                let table = &self.lengths[class_slot(c)];
                assert!(!table.is_empty(), "trip-length class {c:?} not configured");
                legs[j] = (c.reservoir(), table[self.pairing[j][i]]);
            }
            out.push(Particle {
                weight: w,
                legs,
                n_legs: classes.len() as u8,
                current: 0,
            });
        }
    }
}

/// State of the fluid model.
#[derive(Debug, Clone)]
pub struct FluidState {
    /// Clock (h).
    pub t: f64,
    traveling: [Vec<Particle>; 2],
    queues: [VecDeque<Particle>; 2],
    /// Expected live loads.
    pub load: [f64; 2],
    pub moments: MomentState,
    /// `integral (N_A + N_B + Q) dt` since the state was created (veh h).
    pub delay: f64,
    pub entered: f64,
    pub completed: f64,
}

/// Outcome of one fluid step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FluidStep {
    pub speeds: [f64; 2],
    pub intensities: [f64; 2],
    /// Admissible gate flows applied (veh/h).
    pub u: [f64; 2],
    /// Mass released through each gate.
    pub released: [f64; 2],
}

impl FluidState {
    /// Empty network at time `t`.
    pub fn empty(t: f64) -> Self {
        FluidState {
            t,
            traveling: [Vec::new(), Vec::new()],
            queues: [VecDeque::new(), VecDeque::new()],
            load: [0.0; 2],
            moments: MomentState::default(),
            delay: 0.0,
            entered: 0.0,
            completed: 0.0,
        }
    }

    /// Measured state of a simulation run: current legs keep their actual
    /// remaining distance, future legs take their class mean.
    pub fn from_system(state: &SystemState, model: &FluidModel) -> Self {
        let mut out = FluidState::empty(state.t);
        let convert = |trip: &crate::trips::Trip| {
            let mut legs = [(Reservoir::A, 0.0); 3];
            let cur = trip.current_leg();
            legs[0] = (cur.reservoir, cur.remaining_km);
            for (j, l) in trip.future_legs().iter().enumerate() {
                legs[j + 1] = (l.reservoir, model.class_means[class_slot(l.class)]);
            }
            Particle {
                weight: 1.0,
                legs,
                n_legs: 1 + trip.future_legs().len() as u8,
                current: 0,
            }
        };
        for r in Reservoir::ALL {
            out.traveling[r.index()] = state.traveling[r.index()].iter().map(convert).collect();
            out.load[r.index()] = state.hawkes[r.index()].load;
        }
        for g in Gate::ALL {
            out.queues[g.index()] = state.gate.queues[g.index()].iter().map(convert).collect();
        }
        out
    }

    pub fn occupancy(&self, r: Reservoir) -> f64 {
        self.traveling[r.index()].iter().map(|p| p.weight).sum()
    }

    pub fn queue(&self, g: Gate) -> f64 {
        self.queues[g.index()].iter().map(|p| p.weight).sum()
    }

    /// Vehicles held (traveling or queued).
    pub fn held(&self) -> f64 {
        Reservoir::ALL.iter().map(|&r| self.occupancy(r)).sum::<f64>()
            + Gate::ALL.iter().map(|&g| self.queue(g)).sum::<f64>()
    }

    /// Resets the delay integral and the moment accumulators.
    pub fn reset_accumulators(&mut self) {
        self.delay = 0.0;
        self.moments = MomentState::default();
    }

    /// Advances the expected dynamics by `dt` hours under constant requested
    /// gate levels.
    pub fn step(&mut self, model: &FluidModel, levels: GateControls, dt: f64) -> Result<FluidStep> {
        ensure_domain(dt > 0.0, "dt", dt, "step must be positive")?;
        let net = &model.net;

        let n = [self.occupancy(Reservoir::A), self.occupancy(Reservoir::B)];
        let mut speeds = [0.0; 2];
        for r in Reservoir::ALL {
            let p = net.get(r);
            speeds[r.index()] = p.speed_at(r, n[r.index()])? / (1.0 + p.kappa * self.load[r.index()]);
        }

        // Arrivals enter before the move, as in the simulator.
        let mass = model.demand.vehicles_between(self.t, self.t + dt);
        if mass > 0.0 {
            for origin in Reservoir::ALL {
                let m = mass * model.demand.origin_share(origin);
                if m <= 0.0 {
                    continue;
                }
                for (route, share) in model.demand.routes(origin, speeds[0], speeds[1]) {
                    if share > 0.0 {
                        model.cohort(route, m * share, &mut self.traveling[origin.index()]);
                    }
                }
            }
            self.entered += mass;
        }

        let n = [self.occupancy(Reservoir::A), self.occupancy(Reservoir::B)];
        for r in Reservoir::ALL {
            let p = net.get(r);
            speeds[r.index()] = p.speed_at(r, n[r.index()])? / (1.0 + p.kappa * self.load[r.index()]);
        }
        let lambda = Reservoir::ALL
            .map(|r| intensity(n[r.index()], self.load[r.index()], speeds[0], speeds[1], net.get(r)));
        let queued = self.queue(Gate::AB) + self.queue(Gate::BA);
        self.delay += (n[0] + n[1] + queued) * dt;
        self.moments.step(lambda[0], lambda[1], dt);
        for r in Reservoir::ALL {
            let gamma = net.get(r).gamma;
            let decay = (-gamma * dt).exp();
            let i = r.index();
            self.load[i] = self.load[i] * decay + lambda[i] * (1.0 - decay) / gamma;
        }

        for r in Reservoir::ALL {
            let travel = speeds[r.index()] * dt;
            if travel <= 0.0 {
                continue;
            }
            let list = &mut self.traveling[r.index()];
            let mut i = 0;
            while i < list.len() {
                let rem = list[i].remaining();
                if *rem > travel {
                    *rem -= travel;
                    i += 1;
                    continue;
                }
                *rem = 0.0;
                let p = list.swap_remove(i);
                if p.is_last_leg() {
                    self.completed += p.weight;
                } else {
                    self.queues[Gate::leaving(r).index()].push_back(p);
                }
            }
        }

        let mut out = FluidStep {
            speeds,
            intensities: lambda,
            ..FluidStep::default()
        };
        for gate in Gate::ALL {
            let g = gate.index();
            let waiting: f64 = self.queues[g].iter().map(|p| p.weight).sum();
            let u = levels[g].min(model.gate_capacity[g]).min(waiting / dt).max(0.0);
            out.u[g] = u;
            let mut allowance = u * dt;
            let to = gate.into_reservoir().index();
            while allowance > 0.0 {
                let Some(front) = self.queues[g].front_mut() else { break };
                let mut moved = *front;
                if front.weight <= allowance * (1.0 + 1e-12) {
                    self.queues[g].pop_front();
                } else {
                    moved.weight = allowance;
                    front.weight -= allowance;
                }
                allowance -= moved.weight;
                out.released[g] += moved.weight;
                moved.current += 1;
                debug_assert_eq!(moved.legs[moved.current as usize].0, gate.into_reservoir());
                self.traveling[to].push(moved);
            }
        }
        self.t += dt;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{DemandPiece, LengthLaw, OdShares, PerReservoir, ShareRow, TripLengths};
    use crate::network::{FundamentalDiagram, ReservoirParams};
    use approx::assert_relative_eq;

    fn net() -> Network {
        let res = |v_f, rho_j, q, l| ReservoirParams {
            lane_length_km: l,
            fd: FundamentalDiagram::triangular(v_f, rho_j, q).unwrap(),
            alpha: 1.5e-4,
            beta: 0.4,
            gamma: 1.2,
            eta: 0.0,
            kappa: 0.2,
            trip_scale_km: 2.7,
        };
        Network {
            a: res(35.0, 180.0, 1580.0, 328.9),
            b: res(85.0, 140.0, 2350.0, 79.5),
        }
    }

    fn demand() -> DemandModel {
        DemandModel {
            profile: vec![
                DemandPiece { start_min: 0.0, rate_veh_h: 12000.0 },
                DemandPiece { start_min: 60.0, rate_veh_h: 0.0 },
            ],
            share_a: 0.15,
            od_shares: OdShares {
                from_a: ShareRow { to_a: 1.0, to_b: 0.0 },
                from_b: ShareRow { to_a: 1.0, to_b: 0.0 },
            },
            detour_enabled: false,
            detour_elasticity: 0.0,
            trip_lengths: TripLengths {
                a_internal: Some(LengthLaw::Lognormal { mean_km: 2.27, std_km: 1.27 }),
                b_outbound: Some(LengthLaw::Lognormal { mean_km: 2.69, std_km: 1.60 }),
                a_inbound: Some(LengthLaw::Lognormal { mean_km: 2.79, std_km: 1.44 }),
                ..TripLengths::default()
            },
            forecast_error_bound: 0.0,
            demand_ceiling: PerReservoir { a: f64::INFINITY, b: f64::INFINITY },
        }
    }

    #[test]
    fn mass_is_conserved() {
        let model = FluidModel::new(net(), demand(), [43000.0; 2]);
        let mut s = FluidState::empty(0.0);
        let dt = model.dt;
        for k in 0..450 {
            let closed = k < 90;
            s.step(&model, [43000.0, if closed { 0.0 } else { 43000.0 }], dt).unwrap();
            assert_relative_eq!(s.entered, s.held() + s.completed, max_relative = 1e-9);
        }
        assert_relative_eq!(s.entered, 12000.0, max_relative = 1e-9);
        assert!(s.held() < 1.0, "network drains after demand ends");
    }

    #[test]
    fn closed_gate_accumulates_queue() {
        let model = FluidModel::new(net(), demand(), [43000.0; 2]);
        let mut s = FluidState::empty(0.0);
        for _ in 0..90 {
            let st = s.step(&model, [43000.0, 0.0], model.dt).unwrap();
            assert_eq!(st.released[1], 0.0);
        }
        assert!(s.queue(Gate::BA) > 1000.0);
        let st = s.step(&model, [43000.0, 43000.0], model.dt).unwrap();
        assert_relative_eq!(st.released[1], 43000.0 * model.dt, max_relative = 1e-9);
    }

    #[test]
    fn expected_load_tracks_intensity() {
        // Frozen intensity: a(t) -> lambda / gamma.
        let mut n = net();
        n.a.beta = 0.0;
        let model = FluidModel::new(n, demand(), [43000.0; 2]);
        let mut s = FluidState::empty(0.0);
        for _ in 0..450 {
            s.step(&model, [43000.0; 2], model.dt).unwrap();
        }
        assert!(s.load[0] > 0.0);
        assert!(s.moments.variance() >= 0.0);
    }
}
