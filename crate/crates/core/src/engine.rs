//! Event scheduling core: integer microsecond clock, a (time, sequence)
//! ordered queue and seeded per-node random streams.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use core::cmp::{Ordering, Reverse};
use core::fmt;
use core::ops::{Add, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Simulation time in integer microseconds since the start of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1_000_000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
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
        write!(f, "{}us", self.0)
    }
}

/// Who an event is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Global,
    Node(u16),
}

/// Handle returned by [`Engine::schedule`], usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(u64);

/// Payloads carried by the engine must name their kind so that run
/// summaries can count processed events per kind.
pub trait Labeled {
    fn label(&self) -> &'static str;
}

/// A scheduled occurrence.
#[derive(Debug, Clone)]
pub struct Event<P> {
    pub time: SimTime,
    pub sequence: u64,
    pub target: Target,
    pub payload: P,
}

impl<P> Event<P> {
    pub fn id(&self) -> EventId {
        EventId(self.sequence)
    }
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}
impl<P> Queued<P> {
    fn key(&self) -> (SimTime, u64) {
        (self.0.time, self.0.sequence)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("event scheduled in the past: at {at} while clock is {now}")]
    ScheduleInPast { at: SimTime, now: SimTime },
}

/// Counters returned at the end of a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub scheduled: u64,
    pub processed: u64,
    /// Explicit cancellations plus events still pending when the run ended.
    pub cancelled: u64,
    pub per_kind: BTreeMap<&'static str, u64>,
    pub end_time: SimTime,
}

/// Single-threaded discrete-event engine.
///
/// Events are totally ordered by `(time, sequence)`; the sequence counter is
/// the insertion order, so simultaneous events run FIFO.
pub struct Engine<P> {
    now: SimTime,
    queue: BinaryHeap<Reverse<Queued<P>>>,
    next_sequence: u64,
    cancelled: BTreeSet<u64>,
    summary: RunSummary,
    last_processed: Option<(SimTime, u64)>,
}

impl<P: Labeled> Default for Engine<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P: Labeled> Engine<P> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            queue: BinaryHeap::new(),
            next_sequence: 0,
            cancelled: BTreeSet::new(),
            summary: RunSummary::default(),
            last_processed: None,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len() - self.cancelled.len()
    }

    pub fn schedule(&mut self, time: SimTime, target: Target, payload: P) -> Result<EventId, EngineError> {
        if time < self.now {
            return Err(EngineError::ScheduleInPast { at: time, now: self.now });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.summary.scheduled += 1;
        self.queue.push(Reverse(Queued(Event { time, sequence, target, payload })));
        Ok(EventId(sequence))
    }

    /// Schedule `delay` after the current clock.
    pub fn schedule_in(&mut self, delay: SimTime, target: Target, payload: P) -> EventId {
        let at = self.now + delay;
        self.schedule(at, target, payload).expect("relative schedule is never in the past")
    }

    /// Cancel a pending event. Returns false if it already ran or was cancelled.
    pub fn cancel(&mut self, id: EventId) -> bool {
        if id.0 >= self.next_sequence {
            return false;
        }
        let pending = self.queue.iter().any(|q| q.0 .0.sequence == id.0);
        if pending && self.cancelled.insert(id.0) {
            self.summary.cancelled += 1;
            true
        } else {
            false
        }
    }

    /// Pop the next live event with `time <= end`, advancing the clock.
    pub fn pop_until(&mut self, end: SimTime) -> Option<Event<P>> {
        loop {
            let next_time = self.queue.peek()?.0 .0.time;
            if next_time > end {
                return None;
            }
            let Reverse(Queued(event)) = self.queue.pop()?;
            if self.cancelled.remove(&event.sequence) {
                continue;
            }
            let key = (event.time, event.sequence);
            debug_assert!(self.last_processed.map_or(true, |last| last < key));
            self.last_processed = Some(key);
            self.now = event.time;
            self.summary.processed += 1;
            *self.summary.per_kind.entry(event.payload.label()).or_insert(0) += 1;
            return Some(event);
        }
    }

    /// Process every event with `time <= end` through `handler`.
    ///
    /// The clock finishes at `min(end, time of last processed event)`. Events
    /// left in the queue are counted as cancelled and discarded.
    pub fn run_until<F, E>(&mut self, end: SimTime, mut handler: F) -> Result<RunSummary, E>
    where
        F: FnMut(&mut Self, Event<P>) -> Result<(), E>,
    {
        while let Some(event) = self.pop_until(end) {
            handler(self, event)?;
        }
        Ok(self.finish())
    }

    /// Drain the queue and return the summary.
    pub fn finish(&mut self) -> RunSummary {
        let live = self.queue.len() as u64 - self.cancelled.len() as u64;
        self.summary.cancelled += live;
        self.queue.clear();
        self.cancelled.clear();
        self.summary.end_time = self.now;
        self.summary.clone()
    }
}

/// A reproducible random stream.
///
/// Splitting rule: the run seed keys a ChaCha8 generator through
/// `seed_from_u64`, and `stream_id` selects the ChaCha stream. Stream 0 is
/// reserved for global draws; node `i` uses stream `i + 1`. Adding a node
/// therefore never changes another node's draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn for_node(seed: u64, node: u16) -> Self {
        Self::new(seed, u64::from(node) + 1)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform integer in `[0, n - 1]`.
    ///
    /// # Panics
    /// Panics if `n == 0`.
    pub fn draw_uniform(&mut self, n: u32) -> u32 {
        assert!(n >= 1, "draw_uniform requires n >= 1");
        self.rng.gen_range(0..n)
    }
}
