//! Deterministic discrete-event engine.
//!
//! Events are ordered by `(fire_at, seq)` where `seq` is the insertion
//! counter, so simultaneous events fire in the order they were scheduled.
//! Components never call each other directly: every interaction is an event
//! delivered through [`Scheduler`].

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};

/// Simulated time in integer nanoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    /// Rounds to the nearest nanosecond. Negative inputs clamp to zero.
    pub fn from_secs_f64(secs: f64) -> Self {
        SimTime((secs.max(0.0) * 1e9).round() as u64)
    }

    pub fn from_millis_f64(ms: f64) -> Self {
        Self::from_secs_f64(ms / 1e3)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}", self.0 / 1_000_000_000, self.0 % 1_000_000_000)
    }
}

/// Handle to a cancellable event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Scheduled<E> {
    fire_at: SimTime,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Counters backing the no-event-loss invariant:
/// `scheduled == fired + cancelled + pending`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EventCounts {
    pub scheduled: u64,
    pub fired: u64,
    pub cancelled: u64,
    pub pending: u64,
}

/// Clock, event queue and the run's seeded random source.
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Scheduled<E>>,
    cancellable: HashSet<u64>,
    cancelled: HashSet<u64>,
    scheduled: u64,
    fired: u64,
    cancelled_count: u64,
    rng: ChaCha8Rng,
}

impl<E> Scheduler<E> {
    pub fn new(seed: u64) -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancellable: HashSet::new(),
            cancelled: HashSet::new(),
            scheduled: 0,
            fired: 0,
            cancelled_count: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn push(&mut self, fire_at: SimTime, payload: E) -> Result<u64> {
        if fire_at < self.now {
            return Err(SimError::ScheduleInPast {
                now: self.now,
                at: fire_at,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.scheduled += 1;
        self.heap.push(Scheduled {
            fire_at,
            seq,
            payload,
        });
        Ok(seq)
    }

    /// Schedules a fire-and-forget event.
    pub fn schedule(&mut self, fire_at: SimTime, payload: E) -> Result<()> {
        self.push(fire_at, payload).map(|_| ())
    }

    pub fn schedule_in(&mut self, delay: SimTime, payload: E) -> Result<()> {
        self.schedule(self.now + delay, payload)
    }

    /// Schedules an event that may later be withdrawn with [`cancel`](Self::cancel).
    pub fn schedule_cancellable(&mut self, fire_at: SimTime, payload: E) -> Result<EventHandle> {
        let seq = self.push(fire_at, payload)?;
        self.cancellable.insert(seq);
        Ok(EventHandle(seq))
    }

    /// Cancels a pending event. Returns false if it already fired or was
    /// already cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if self.cancellable.remove(&handle.0) {
            self.cancelled.insert(handle.0);
            self.cancelled_count += 1;
            true
        } else {
            false
        }
    }

    pub fn counts(&self) -> EventCounts {
        EventCounts {
            scheduled: self.scheduled,
            fired: self.fired,
            cancelled: self.cancelled_count,
            pending: (self.heap.len() - self.cancelled.len()) as u64,
        }
    }

    /// Payloads of every event still pending (cancelled events excluded).
    pub fn pending(&self) -> impl Iterator<Item = &E> + '_ {
        self.heap
            .iter()
            .filter(|s| !self.cancelled.contains(&s.seq))
            .map(|s| &s.payload)
    }

    fn pop_until(&mut self, horizon: SimTime) -> Option<E> {
        loop {
            let head = self.heap.peek()?;
            if head.fire_at > horizon {
                return None;
            }
            let ev = self.heap.pop().expect("peeked");
            if !self.cancelled.is_empty() && self.cancelled.remove(&ev.seq) {
                continue;
            }
            if !self.cancellable.is_empty() {
                self.cancellable.remove(&ev.seq);
            }
            self.now = ev.fire_at;
            self.fired += 1;
            return Some(ev.payload);
        }
    }
}

/// Something that reacts to events. A run is a model plus its scheduler.
pub trait Model {
    type Event;

    fn handle(&mut self, event: Self::Event, sched: &mut Scheduler<Self::Event>) -> Result<()>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOutcome {
    pub clock: SimTime,
    pub events_processed: u64,
}

pub struct Simulation<M: Model> {
    pub model: M,
    pub sched: Scheduler<M::Event>,
}

impl<M: Model> Simulation<M> {
    pub fn new(model: M, seed: u64) -> Self {
        Simulation {
            model,
            sched: Scheduler::new(seed),
        }
    }

    /// Processes every event with `fire_at <= horizon`, then parks the clock
    /// at the horizon. A handler fault aborts the run with its timestamp.
    pub fn run_until(&mut self, horizon: SimTime) -> Result<RunOutcome> {
        let start = self.sched.fired;
        while let Some(ev) = self.sched.pop_until(horizon) {
            if let Err(e) = self.model.handle(ev, &mut self.sched) {
                return Err(SimError::Aborted {
                    at: self.sched.now,
                    source: Box::new(e),
                });
            }
        }
        if self.sched.now < horizon {
            self.sched.now = horizon;
        }
        Ok(RunOutcome {
            clock: self.sched.now,
            events_processed: self.sched.fired - start,
        })
    }
}
