//! Deterministic discrete-event engine: virtual clock, event queue with
//! stable FIFO tie-breaking, and Poisson background-traffic generation over
//! active circuit populations.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Duration;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::directory::{Address, RelayId};
use crate::pathsel::Circuit;
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot schedule event at {at} before current clock {now}")]
    SchedulePast { at: SimTime, now: SimTime },
}

/// A scheduled event; `(at, seq)` is unique and defines total dispatch order.
#[derive(Clone, Debug)]
pub struct Event<P> {
    pub at: SimTime,
    pub seq: u64,
    pub payload: P,
}

struct HeapEntry<P>(Event<P>);

impl<P> PartialEq for HeapEntry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.at == other.0.at && self.0.seq == other.0.seq
    }
}

impl<P> Eq for HeapEntry<P> {}

impl<P> PartialOrd for HeapEntry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for HeapEntry<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for earliest-first dispatch.
        (other.0.at, other.0.seq).cmp(&(self.0.at, self.0.seq))
    }
}

/// Event queue plus virtual clock. Strictly single-threaded per run.
pub struct EventQueue<P> {
    heap: BinaryHeap<HeapEntry<P>>,
    now: SimTime,
    next_seq: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Enqueue a payload for dispatch at `at`. Events in the past are
    /// rejected; equal timestamps dispatch in insertion order.
    pub fn schedule(&mut self, at: SimTime, payload: P) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::SchedulePast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(HeapEntry(Event { at, seq, payload }));
        Ok(())
    }

    /// Pop the next event due at or before `limit`, advancing the clock to
    /// its timestamp.
    pub fn pop_due(&mut self, limit: SimTime) -> Option<Event<P>> {
        let due = self.heap.peek().map(|e| e.0.at <= limit).unwrap_or(false);
        if !due {
            return None;
        }
        let event = self.heap.pop().expect("peeked entry exists").0;
        debug_assert!(event.at >= self.now, "dispatch must be monotone");
        self.now = event.at;
        Some(event)
    }

    /// Dispatch every event due at or before `t` in `(at, seq)` order, then
    /// advance the clock to `t`. Returns the number of events dispatched.
    pub fn run_until(&mut self, t: SimTime, mut handler: impl FnMut(Event<P>)) -> usize {
        let mut dispatched = 0;
        while let Some(event) = self.pop_due(t) {
            handler(event);
            dispatched += 1;
        }
        if t > self.now {
            self.now = t;
        }
        dispatched
    }

    /// Advance the clock without dispatching (used for idle gaps; panics if
    /// events would be skipped).
    pub fn advance_idle(&mut self, t: SimTime) {
        debug_assert!(
            self.heap.peek().map(|e| e.0.at > t).unwrap_or(true),
            "advance_idle would skip a due event"
        );
        if t > self.now {
            self.now = t;
        }
    }
}

/// One flow seen at a relay: traffic forwarded from `src` toward `dst`.
///
/// `src` is the upstream neighbor's address (or the relay's own address at a
/// path endpoint), `dst` the downstream neighbor's. Only `dst` is ever
/// consumed by the observer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowObservation {
    pub at_relay: RelayId,
    pub src: Address,
    pub dst: Address,
    pub at: SimTime,
}

/// Resolve relay ids to addresses for flow generation.
pub trait AddressBook {
    fn address_of(&self, id: &RelayId) -> Option<&Address>;
}

impl AddressBook for crate::directory::RelaySnapshot {
    fn address_of(&self, id: &RelayId) -> Option<&Address> {
        self.get(id).map(|r| &r.address)
    }
}

/// Generate background flows over `window` for every circuit overlapping it.
///
/// Each hop of each circuit emits observations as a Poisson process with the
/// given per-hop intensity (flows per circuit per second); the destination of
/// each observation is a uniformly chosen adjacent hop. Observations are
/// delivered to `sink` only when `monitored` accepts the hop's relay, so
/// untapped traffic costs nothing beyond the per-circuit scan.
pub fn emit_background_traffic<R: Rng>(
    circuits: impl Iterator<Item = impl std::borrow::Borrow<Circuit>>,
    addresses: &impl AddressBook,
    intensity: f64,
    window: (SimTime, SimTime),
    monitored: impl Fn(&RelayId) -> bool,
    rng: &mut R,
    mut sink: impl FnMut(FlowObservation),
) {
    let (t0, t1) = window;
    assert!(t1 > t0, "window must have positive extent");
    if intensity <= 0.0 {
        return;
    }
    for circuit in circuits {
        let circuit = circuit.borrow();
        let start = circuit.created_at.max(t0);
        let stop = circuit.expires_at.min(t1);
        if stop <= start {
            continue;
        }
        let overlap = (stop - start).as_secs_f64();
        for (pos, relay) in circuit.hops.iter().enumerate() {
            if !monitored(relay) {
                continue;
            }
            let mean = intensity * overlap;
            let count = Poisson::new(mean)
                .map(|p| p.sample(rng) as u64)
                .unwrap_or(0);
            for _ in 0..count {
                let offset = rng.gen_range(0.0..overlap);
                let at = start + Duration::from_secs_f64(offset);
                let (src_id, dst_id) = pick_neighbors(circuit, pos, rng);
                let Some(dst) = addresses.address_of(&dst_id) else {
                    continue;
                };
                let src = match src_id {
                    Some(id) => match addresses.address_of(&id) {
                        Some(a) => a.clone(),
                        None => continue,
                    },
                    None => match addresses.address_of(relay) {
                        Some(a) => a.clone(),
                        None => continue,
                    },
                };
                if src == *dst {
                    continue;
                }
                sink(FlowObservation {
                    at_relay: relay.clone(),
                    src,
                    dst: dst.clone(),
                    at,
                });
            }
        }
    }
}

/// Choose the flow direction at a hop: destination is a uniform adjacent
/// neighbor, source is the opposite neighbor when one exists.
fn pick_neighbors<R: Rng>(
    circuit: &Circuit,
    pos: usize,
    rng: &mut R,
) -> (Option<RelayId>, RelayId) {
    let prev = pos.checked_sub(1).map(|p| circuit.hops[p].clone());
    let next = circuit.hops.get(pos + 1).cloned();
    match (prev, next) {
        (Some(p), Some(n)) => {
            if rng.gen_bool(0.5) {
                (Some(p), n)
            } else {
                (Some(n), p)
            }
        }
        (Some(p), None) => (None, p),
        (None, Some(n)) => (None, n),
        (None, None) => unreachable!("single-hop circuits are not constructible"),
    }
}

/// Piecewise-constant time-of-day load profile anchored at 02:00, 10:00, and
/// 18:00 UTC.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiurnalProfile {
    #[serde(rename = "02:00")]
    pub h02: f64,
    #[serde(rename = "10:00")]
    pub h10: f64,
    #[serde(rename = "18:00")]
    pub h18: f64,
}

impl Default for DiurnalProfile {
    fn default() -> Self {
        DiurnalProfile {
            h02: 0.6,
            h10: 1.0,
            h18: 1.4,
        }
    }
}

impl DiurnalProfile {
    pub fn is_valid(&self) -> bool {
        self.h02 > 0.0 && self.h10 > 0.0 && self.h18 > 0.0
    }
}

/// Scale a base intensity by the profile multiplier whose interval contains
/// `time_of_day` (hours in [0, 24); the 18:00 band wraps past midnight).
pub fn diurnal_intensity(base: f64, time_of_day: f64, profile: &DiurnalProfile) -> f64 {
    let hour = time_of_day.rem_euclid(24.0);
    let multiplier = if (2.0..10.0).contains(&hour) {
        profile.h02
    } else if (10.0..18.0).contains(&hour) {
        profile.h10
    } else {
        profile.h18
    };
    base * multiplier
}
