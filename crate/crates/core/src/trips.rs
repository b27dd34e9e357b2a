//! Individual trips: an ordered list of legs, each driven inside one reservoir.

use crate::network::Reservoir;

/// Role of a leg within its trip; selects the trip-length law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LegClass {
    AInternal,
    BInternal,
    AOutbound,
    BInbound,
    BOutbound,
    AInbound,
}

impl LegClass {
    pub fn reservoir(self) -> Reservoir {
        match self {
            LegClass::AInternal | LegClass::AOutbound | LegClass::AInbound => Reservoir::A,
            LegClass::BInternal | LegClass::BOutbound | LegClass::BInbound => Reservoir::B,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leg {
    pub class: LegClass,
    pub reservoir: Reservoir,
    /// Distance still to drive on this leg (km).
    pub remaining_km: f64,
}

impl Leg {
    pub fn new(class: LegClass, length_km: f64) -> Self {
        Leg {
            class,
            reservoir: class.reservoir(),
            remaining_km: length_km,
        }
    }
}

const MAX_LEGS: usize = 3;

/// Where a trip currently is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripStatus {
    Traveling(Reservoir),
    /// Waiting at the gate into the given reservoir.
    Queued(Reservoir),
    Completed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    pub id: u64,
    pub origin: Reservoir,
    legs: [Leg; MAX_LEGS],
    n_legs: u8,
    current: u8,
    /// Time the trip entered the system (h).
    pub entry_time: f64,
    /// Time of the most recent boundary crossing (h).
    pub crossing_time: Option<f64>,
    pub completion_time: Option<f64>,
    /// Time the trip joined its current gate queue (h).
    pub queued_since: Option<f64>,
}

impl Trip {
    /// Builds a trip from one to three legs.
    pub fn new(id: u64, origin: Reservoir, legs: impl IntoIterator<Item = Leg>, entry_time: f64) -> Self {
        let placeholder = Leg::new(LegClass::AInternal, 0.0);
        let mut arr = [placeholder; MAX_LEGS];
        let mut n = 0;
        for leg in legs {
            assert!(n < MAX_LEGS, "a trip has at most {MAX_LEGS} legs");
            assert!(leg.remaining_km >= 0.0, "leg lengths are non-negative");
            arr[n] = leg;
            n += 1;
        }
        assert!(n > 0, "a trip has at least one leg");
        assert_eq!(arr[0].reservoir, origin, "the first leg starts in the origin");
        Trip {
            id,
            origin,
            legs: arr,
            n_legs: n as u8,
            current: 0,
            entry_time,
            crossing_time: None,
            completion_time: None,
            queued_since: None,
        }
    }

    pub fn legs(&self) -> &[Leg] {
        &self.legs[..self.n_legs as usize]
    }

    pub fn current_index(&self) -> usize {
        self.current as usize
    }

    pub fn current_leg(&self) -> &Leg {
        &self.legs[self.current as usize]
    }

    pub(crate) fn current_leg_mut(&mut self) -> &mut Leg {
        &mut self.legs[self.current as usize]
    }

    /// Legs not yet started.
    pub fn future_legs(&self) -> &[Leg] {
        &self.legs[self.current as usize + 1..self.n_legs as usize]
    }

    pub fn is_last_leg(&self) -> bool {
        self.current + 1 == self.n_legs
    }

    /// Reservoir of the next leg, if any.
    pub fn next_reservoir(&self) -> Option<Reservoir> {
        self.future_legs().first().map(|l| l.reservoir)
    }

    pub(crate) fn begin_next_leg(&mut self) {
        debug_assert!(!self.is_last_leg());
        self.current += 1;
    }

    /// Total distance still to drive (km).
    pub fn remaining_distance(&self) -> f64 {
        self.legs()[self.current as usize..]
            .iter()
            .map(|l| l.remaining_km)
            .sum()
    }

    pub fn status(&self) -> TripStatus {
        if self.completion_time.is_some() {
            TripStatus::Completed
        } else if self.queued_since.is_some() {
            TripStatus::Queued(self.next_reservoir().expect("queued trips have a next leg"))
        } else {
            TripStatus::Traveling(self.current_leg().reservoir)
        }
    }

    /// Travel time (h): completion minus entry, or time in system so far.
    pub fn time_in_system(&self, now: f64) -> f64 {
        self.completion_time.unwrap_or(now) - self.entry_time
    }
}
