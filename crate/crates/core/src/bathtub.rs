//! Lagrangian bathtub simulator: per-vehicle remaining distances advanced at
//! the reservoir speed, gated transfers through FIFO boundary queues, and
//! exact trip accounting.

use std::collections::VecDeque;

use rand::Rng;

use crate::accidents::{intensity, HawkesState, MomentState};
use crate::error::{ensure_domain, Result};
use crate::network::{DegradationState, Network, Reservoir};
use crate::trips::Trip;

/// A perimeter gate, named by the direction it meters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gate {
    AB,
    BA,
}

impl Gate {
    pub const ALL: [Gate; 2] = [Gate::AB, Gate::BA];

    pub fn index(self) -> usize {
        match self {
            Gate::AB => 0,
            Gate::BA => 1,
        }
    }

    /// Reservoir the gate feeds.
    pub fn into_reservoir(self) -> Reservoir {
        match self {
            Gate::AB => Reservoir::B,
            Gate::BA => Reservoir::A,
        }
    }

    pub fn from_reservoir(self) -> Reservoir {
        self.into_reservoir().other()
    }

    /// Gate crossed when moving from `from` to the other reservoir.
    pub fn leaving(from: Reservoir) -> Gate {
        match from {
            Reservoir::A => Gate::AB,
            Reservoir::B => Gate::BA,
        }
    }
}

/// Requested gate levels for one step (veh/h), indexed by [`Gate::index`].
pub type GateControls = [f64; 2];

/// Gate metering state and boundary queues.
#[derive(Debug, Clone, PartialEq)]
pub struct GateState {
    /// Metering capacities (veh/h).
    pub capacity: [f64; 2],
    /// Admissible flows applied in the last step (veh/h).
    pub u: [f64; 2],
    /// Boundary requests seen in the last step (veh/h).
    pub request: [f64; 2],
    pub queues: [VecDeque<Trip>; 2],
    carry: [f64; 2],
}

impl GateState {
    pub fn new(capacity: [f64; 2]) -> Self {
        GateState {
            capacity,
            u: [0.0; 2],
            request: [0.0; 2],
            queues: [VecDeque::new(), VecDeque::new()],
            carry: [0.0; 2],
        }
    }

    pub fn queue_len(&self, gate: Gate) -> usize {
        self.queues[gate.index()].len()
    }

    pub fn queued(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }
}

/// Integer trip counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub entered: u64,
    pub completed: u64,
    /// Trips released through each gate.
    pub transferred: [u64; 2],
}

/// What happened during one [`SystemState::advance`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    /// Effective speeds used for the step (km/h), indexed by reservoir.
    pub speeds: [f64; 2],
    pub completions: u32,
    /// Trips released through each gate.
    pub transfers: [u32; 2],
}

/// Full dynamic state of one simulation run.
#[derive(Debug, Clone)]
pub struct SystemState {
    /// Clock (h).
    pub t: f64,
    /// Trips driving inside each reservoir.
    pub traveling: [Vec<Trip>; 2],
    pub gate: GateState,
    pub hawkes: [HawkesState; 2],
    pub moments: MomentState,
    pub counters: Counters,
    pub completed: Vec<Trip>,
    kappa: [f64; 2],
}

impl SystemState {
    pub fn new(net: &Network, gate_capacity: [f64; 2]) -> Self {
        SystemState {
            t: 0.0,
            traveling: [Vec::new(), Vec::new()],
            gate: GateState::new(gate_capacity),
            hawkes: [HawkesState::new(), HawkesState::new()],
            moments: MomentState::default(),
            counters: Counters::default(),
            completed: Vec::new(),
            kappa: [net.a.kappa, net.b.kappa],
        }
    }

    /// Active trips in reservoir `r`.
    pub fn occupancy(&self, r: Reservoir) -> usize {
        self.traveling[r.index()].len()
    }

    pub fn queued(&self) -> usize {
        self.gate.queued()
    }

    pub fn degradation(&self, r: Reservoir) -> DegradationState {
        DegradationState::new(self.hawkes[r.index()].load, self.kappa[r.index()])
    }

    /// `entered == N_A + N_B + queued + completed`.
    pub fn is_conserved(&self) -> bool {
        let held = self.traveling[0].len() + self.traveling[1].len() + self.queued();
        self.counters.entered == held as u64 + self.counters.completed
    }

    /// Effective speeds `chi_r V_r(N_r / L_r)`; fails with gridlock above jam.
    pub fn speeds(&self, net: &Network) -> Result<[f64; 2]> {
        let mut v = [0.0; 2];
        for r in Reservoir::ALL {
            let base = net.get(r).speed_at(r, self.occupancy(r) as f64)?;
            v[r.index()] = self.degradation(r).factor * base;
        }
        Ok(v)
    }

    /// Accident intensities under the current state.
    pub fn intensities(&self, net: &Network, speeds: [f64; 2]) -> [f64; 2] {
        Reservoir::ALL.map(|r| {
            intensity(
                self.occupancy(r) as f64,
                self.hawkes[r.index()].load,
                speeds[0],
                speeds[1],
                net.get(r),
            )
        })
    }

    /// Adds new trips to their origin reservoirs.
    pub fn admit(&mut self, trips: impl IntoIterator<Item = Trip>) {
        for trip in trips {
            self.counters.entered += 1;
            self.traveling[trip.origin.index()].push(trip);
        }
    }

    /// Registers an accident in `r` at the current clock.
    pub fn inject_accident(&mut self, r: Reservoir) {
        let t = self.t;
        self.hawkes[r.index()].record(t);
    }

    /// Moves every trip by one step, then releases queued trips through the
    /// gates at the admissible rate `min(controls, capacity, request)`.
    pub fn advance(&mut self, net: &Network, controls: GateControls, dt: f64) -> Result<StepReport> {
        ensure_domain(dt > 0.0, "dt", dt, "step must be positive")?;
        let speeds = self.speeds(net)?;
        let mut report = StepReport {
            speeds,
            ..StepReport::default()
        };

        let mut joiners: [Vec<(f64, Trip)>; 2] = [Vec::new(), Vec::new()];
        for r in Reservoir::ALL {
            let travel = speeds[r.index()] * dt;
            if travel <= 0.0 {
                continue;
            }
            let trips = &mut self.traveling[r.index()];
            let mut i = 0;
            while i < trips.len() {
                let leg = trips[i].current_leg_mut();
                if leg.remaining_km > travel {
                    leg.remaining_km -= travel;
                    i += 1;
                    continue;
                }
                let at = self.t + dt * leg.remaining_km / travel;
                leg.remaining_km = 0.0;
                let mut trip = trips.swap_remove(i);
                if trip.is_last_leg() {
                    trip.completion_time = Some(at);
                    self.counters.completed += 1;
                    report.completions += 1;
                    self.completed.push(trip);
                } else {
                    trip.queued_since = Some(at);
                    joiners[Gate::leaving(r).index()].push((at, trip));
                }
            }
        }
        for (g, mut batch) in joiners.into_iter().enumerate() {
            batch.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.id.cmp(&y.1.id)));
            self.gate.queues[g].extend(batch.into_iter().map(|(_, trip)| trip));
        }

        let t_end = self.t + dt;
        for gate in Gate::ALL {
            let g = gate.index();
            let waiting = self.gate.queues[g].len();
            let request = waiting as f64 / dt;
            let u = controls[g].min(self.gate.capacity[g]).min(request).max(0.0);
            self.gate.request[g] = request;
            self.gate.u[g] = u;
            let allowance = u * dt + self.gate.carry[g];
            let released = ((allowance + 1e-9).floor() as usize).min(waiting);
            self.gate.carry[g] = if released < waiting {
                (allowance - released as f64).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let to = gate.into_reservoir().index();
            for mut trip in self.gate.queues[g].drain(..released) {
                trip.queued_since = None;
                trip.crossing_time = Some(t_end);
                trip.begin_next_leg();
                self.traveling[to].push(trip);
            }
            self.counters.transferred[g] += released as u64;
            report.transfers[g] = released as u32;
        }

        self.t = t_end;
        Ok(report)
    }

    /// Samples accidents for the step that just ended and updates the moment
    /// accumulators. Returns the reservoirs with an accident and its time.
    pub fn sample_accidents<R: Rng + ?Sized>(
        &mut self,
        net: &Network,
        intensities_base: [f64; 2],
        t_start: f64,
        dt: f64,
        rng: &mut R,
    ) -> Vec<(Reservoir, f64)> {
        let mut events = Vec::new();
        for r in Reservoir::ALL {
            if let Some(te) = self.hawkes[r.index()].step(intensities_base[r.index()], net.get(r), t_start, dt, rng) {
                events.push((r, te));
            }
        }
        let (la, lb) = (self.hawkes[0].lambda, self.hawkes[1].lambda);
        self.moments.step(la, lb, dt);
        events
    }
}

/// Free-function form of [`SystemState::advance`].
pub fn advance(state: &mut SystemState, net: &Network, controls: GateControls, dt: f64) -> Result<StepReport> {
    state.advance(net, controls, dt)
}

/// Exit flow `N v / B` (veh/h) of a reservoir with exponential trip lengths of scale `B`.
pub fn exit_flow_exponential(n: f64, trip_scale_km: f64, v: f64) -> Result<f64> {
    ensure_domain(trip_scale_km > 0.0, "B_trip", trip_scale_km, "trip scale must be > 0")?;
    ensure_domain(n >= 0.0, "N", n, "occupancy must be >= 0")?;
    Ok(n * v / trip_scale_km)
}
