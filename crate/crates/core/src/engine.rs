//! Discrete-event scheduler, simulated clock and seeded randomness.
//!
//! Every simulated component shares one [`Scheduler`]. Events are ordered by
//! `(fire_at, seq)` where `seq` is the global issue order, so two runs that
//! schedule the same events in the same order deliver them identically.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Simulated time in whole microseconds since scenario start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Rounds to the nearest microsecond.
    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * 1e6).round().max(0.0) as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn as_secs_f64(self) -> f64 {
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

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}s", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// Handle returned by [`Scheduler::schedule`]; the event's issue sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(pub u64);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("event scheduled in the past: fire_at {fire_at} < now {now}")]
    InPast { fire_at: SimTime, now: SimTime },
    #[error("run_until target {target} is before now {now}")]
    RewindRequested { target: SimTime, now: SimTime },
    #[error("handler failed on event #{seq} at {fire_at} ({event}): {reason}")]
    Handler {
        seq: u64,
        fire_at: SimTime,
        event: String,
        reason: String,
    },
}

struct Entry<E> {
    fire_at: SimTime,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// An event popped from the queue.
#[derive(Debug)]
pub struct Fired<E> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub payload: E,
}

/// Single-queue global event scheduler.
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<E>>,
    live: HashSet<u64>,
    delivered: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            live: HashSet::new(),
            delivered: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events delivered so far.
    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn pending(&self) -> usize {
        self.live.len()
    }

    pub fn schedule(&mut self, fire_at: SimTime, payload: E) -> Result<EventHandle, EngineError> {
        if fire_at < self.now {
            return Err(EngineError::InPast {
                fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry {
            fire_at,
            seq,
            payload,
        });
        self.live.insert(seq);
        Ok(EventHandle(seq))
    }

    /// Schedules `delay` after now. Cannot fail.
    pub fn after(&mut self, delay: SimTime, payload: E) -> EventHandle {
        let at = self.now + delay;
        self.schedule(at, payload)
            .expect("now + delay is never in the past")
    }

    /// Returns true iff the event was still pending.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.live.remove(&handle.0)
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.live.contains(&handle.0)
    }

    /// Pops the next live event with `fire_at <= limit`, advancing the clock to it.
    pub fn pop_due(&mut self, limit: SimTime) -> Option<Fired<E>> {
        loop {
            let top = self.heap.peek()?;
            if top.fire_at > limit {
                return None;
            }
            let entry = self.heap.pop().expect("peeked");
            if !self.live.remove(&entry.seq) {
                continue;
            }
            self.now = entry.fire_at;
            self.delivered += 1;
            return Some(Fired {
                fire_at: entry.fire_at,
                seq: entry.seq,
                payload: entry.payload,
            });
        }
    }

    /// Moves the clock forward to `t` without delivering anything.
    pub fn advance_to(&mut self, t: SimTime) -> Result<(), EngineError> {
        if t < self.now {
            return Err(EngineError::RewindRequested {
                target: t,
                now: self.now,
            });
        }
        self.now = t;
        Ok(())
    }

    /// Delivers every event with `fire_at <= t` in `(fire_at, seq)` order, including
    /// events scheduled by the handler itself, then sets the clock to `t`.
    pub fn run_until<F>(&mut self, t: SimTime, mut handler: F) -> Result<usize, EngineError>
    where
        F: FnMut(&mut Scheduler<E>, SimTime, E) -> Result<(), String>,
        E: fmt::Debug,
    {
        if t < self.now {
            return Err(EngineError::RewindRequested {
                target: t,
                now: self.now,
            });
        }
        let mut fired = 0;
        while let Some(ev) = self.pop_due(t) {
            let desc = format!("{:?}", ev.payload);
            handler(self, ev.fire_at, ev.payload).map_err(|reason| EngineError::Handler {
                seq: ev.seq,
                fire_at: ev.fire_at,
                event: desc,
                reason,
            })?;
            fired += 1;
        }
        self.now = t;
        Ok(fired)
    }
}

/// Seeded PRNG with a stable, named algorithm.
pub struct SimRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SimRng {
    pub const ALGORITHM: &'static str = "ChaCha8Rng";

    pub fn new(seed: u64) -> Self {
        SimRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        Self::ALGORITHM
    }

    /// Derives an independent stream, e.g. one per trial.
    pub fn fork(&mut self, salt: u64) -> SimRng {
        let s = self.inner.random::<u64>() ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        SimRng::new(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the range is empty.
    pub fn range_u64(&mut self, lo: u64, hi: u64) -> u64 {
        if hi <= lo {
            lo
        } else {
            self.inner.random_range(lo..hi)
        }
    }

    pub fn unit_f64(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn bool(&mut self, p: f64) -> bool {
        self.inner.random_bool(p.clamp(0.0, 1.0))
    }
}
