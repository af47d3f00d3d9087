//! Deterministic discrete-event substrate: a time-ordered event queue with a
//! simulation clock, and named seeded random streams.

use alloc::collections::{BTreeSet, BinaryHeap};
use alloc::string::String;
use core::cmp::Ordering;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::Error;

/// Simulated time in seconds.
pub type Time = f64;

/// Opaque handle returned by [`EventQueue::schedule`], usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle(pub u64);

/// A pending event: `(fire_time, sequence)` is unique and defines firing order.
#[derive(Debug, Clone)]
pub struct SimEvent<A> {
    pub fire_time: Time,
    pub sequence: u64,
    pub action: A,
}

impl<A> PartialEq for SimEvent<A> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<A> Eq for SimEvent<A> {}

impl<A> PartialOrd for SimEvent<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for SimEvent<A> {
    // BinaryHeap is a max-heap; invert so the earliest event is on top.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_time
            .total_cmp(&self.fire_time)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub events_fired: u64,
    pub final_clock: Time,
}

/// Time-ordered pending event set plus the simulation clock.
///
/// Ties on `fire_time` resolve by insertion sequence. Cancellation is by
/// tombstone: a cancelled event stays in the heap and is skipped when popped.
#[derive(Debug)]
pub struct EventQueue<A> {
    heap: BinaryHeap<SimEvent<A>>,
    cancelled: BTreeSet<u64>,
    now: Time,
    next_sequence: u64,
    fired: u64,
}

impl<A> Default for EventQueue<A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<A> EventQueue<A> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            cancelled: BTreeSet::new(),
            now: 0.0,
            next_sequence: 0,
            fired: 0,
        }
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn events_fired(&self) -> u64 {
        self.fired
    }

    /// Number of live (not cancelled) pending events.
    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    /// Schedules `action` at absolute time `fire_time`.
    pub fn schedule(&mut self, fire_time: Time, action: A) -> Result<EventHandle, Error> {
        if !(fire_time >= self.now) {
            return Err(Error::Causality {
                fire_time,
                now: self.now,
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(SimEvent {
            fire_time,
            sequence,
            action,
        });
        Ok(EventHandle(sequence))
    }

    /// Schedules `action` `delay` seconds from now.
    pub fn schedule_in(&mut self, delay: Time, action: A) -> Result<EventHandle, Error> {
        self.schedule(self.now + delay, action)
    }

    pub fn cancel(&mut self, handle: EventHandle) {
        if handle.0 < self.next_sequence {
            self.cancelled.insert(handle.0);
        }
    }

    /// Pops the next live event with `fire_time <= limit`, advancing the clock.
    pub fn pop_until(&mut self, limit: Time) -> Option<SimEvent<A>> {
        loop {
            let top = self.heap.peek()?;
            if top.fire_time > limit {
                return None;
            }
            let ev = self.heap.pop()?;
            if self.cancelled.remove(&ev.sequence) {
                continue;
            }
            self.now = ev.fire_time;
            self.fired += 1;
            return Some(ev);
        }
    }

    /// Fires every event with `fire_time <= t_end` in order through `handler`,
    /// then sets the clock to `t_end`. The handler may schedule further events.
    pub fn run_until<F>(&mut self, t_end: Time, mut handler: F) -> Result<RunSummary, Error>
    where
        F: FnMut(&mut Self, SimEvent<A>) -> Result<(), Error>,
    {
        if !(t_end >= self.now) {
            return Err(Error::Causality {
                fire_time: t_end,
                now: self.now,
            });
        }
        let start = self.fired;
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev)?;
        }
        self.now = t_end;
        Ok(RunSummary {
            events_fired: self.fired - start,
            final_clock: self.now,
        })
    }
}

/// FNV-1a, used only to derive a stream id from a stream name.
fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A named random stream. `(name, seed)` fully determines the sequence:
/// ChaCha8 keyed by the run seed, with the stream selector derived from the
/// name, so streams never share state.
#[derive(Debug, Clone)]
pub struct RngStream {
    name: String,
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(name: &str, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id(name));
        Self {
            name: name.into(),
            seed,
            rng,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`.
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.uniform()
    }
}

/// Exponential variate with the given mean: `-mean * ln(u)`, `u` in `(0, 1]`.
///
/// `u = 1` yields exactly zero, so the result is clamped to the smallest
/// positive value to keep inter-arrival times strictly positive.
pub fn sample_exponential(stream: &mut RngStream, mean: f64) -> Result<f64, Error> {
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(Error::InvalidParameter {
            what: "exponential mean",
            value: mean,
        });
    }
    let u = stream.uniform_open0();
    Ok((-mean * libm::log(u)).max(f64::MIN_POSITIVE))
}

pub fn sample_constant(value: f64) -> Result<f64, Error> {
    if !(value >= 0.0) || !value.is_finite() {
        return Err(Error::InvalidParameter {
            what: "constant",
            value,
        });
    }
    Ok(value)
}

/// A scalar distribution used for inter-arrival times and unit sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Constant(f64),
    Exponential { mean: f64 },
}

impl Dist {
    pub fn sample(&self, stream: &mut RngStream) -> Result<f64, Error> {
        match *self {
            Dist::Constant(v) => sample_constant(v),
            Dist::Exponential { mean } => sample_exponential(stream, mean),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Constant(v) => v,
            Dist::Exponential { mean } => mean,
        }
    }

    pub fn is_positive(&self) -> bool {
        let m = self.mean();
        m > 0.0 && m.is_finite()
    }
}
