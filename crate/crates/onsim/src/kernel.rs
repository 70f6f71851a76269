//! Deterministic discrete-event core: a virtual clock, an ordered event
//! queue, label-derived random streams, and an append-only dispatch trace
//! whose digest is stable for a fixed (config, master seed) pair.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Simulated time in seconds. Always finite and non-negative.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    /// Wraps a number of simulated seconds.
    ///
    /// Panics if `secs` is negative, NaN or infinite; simulated time is a
    /// plain forward-running clock.
    pub fn from_secs(secs: f64) -> SimTime {
        assert!(
            secs.is_finite() && secs >= 0.0,
            "sim time must be finite and non-negative, got {secs}"
        );
        SimTime(secs)
    }

    pub fn as_secs(self) -> f64 {
        self.0
    }

    /// This time plus `secs` (must yield a valid time).
    pub fn after(self, secs: f64) -> SimTime {
        SimTime::from_secs(self.0 + secs)
    }
}

impl PartialEq for SimTime {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}
impl Eq for SimTime {}
impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}
impl std::fmt::Display for SimTime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.9}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("cannot schedule event at t={requested} before current clock t={clock}")]
    SchedulingInPast { requested: f64, clock: f64 },
}

/// Payloads carried by events. The label is folded into the run digest, so
/// it must be a pure function of the payload.
pub trait EventPayload {
    fn trace_label(&self) -> String;
}

/// A scheduled occurrence. Total dispatch order is `(fire_at, seq)` where
/// `seq` is the kernel-wide insertion counter.
#[derive(Debug, Clone)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub payload: P,
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.fire_at == other.0.fire_at && self.0.seq == other.0.seq
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Queued<P> {
    // BinaryHeap is a max-heap; reverse so the earliest (fire_at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_at, other.0.seq).cmp(&(self.0.fire_at, self.0.seq))
    }
}

/// One dispatched event as recorded in the trace.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub seq: u64,
    pub fire_at: SimTime,
    pub label: String,
}

/// Append-only record of every dispatched event, with a running SHA-256
/// digest. Identical (config, master seed) runs produce identical digests.
#[derive(Clone)]
pub struct EventTrace {
    records: Vec<TraceRecord>,
    hasher: Sha256,
}

impl EventTrace {
    fn new() -> Self {
        EventTrace {
            records: Vec::new(),
            hasher: Sha256::new(),
        }
    }

    fn push(&mut self, seq: u64, fire_at: SimTime, label: String) {
        self.hasher.update(seq.to_le_bytes());
        self.hasher.update(fire_at.as_secs().to_bits().to_le_bytes());
        self.hasher.update(label.as_bytes());
        self.hasher.update(*b"\n");
        self.records.push(TraceRecord {
            seq,
            fire_at,
            label,
        });
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Digest of the dispatched-event sequence, as lowercase hex.
    pub fn digest_hex(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }
}

impl std::fmt::Debug for EventTrace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventTrace")
            .field("len", &self.records.len())
            .finish()
    }
}

/// A named pseudo-random stream derived from the master seed. Streams with
/// distinct labels are independent; the same (seed, label) pair always
/// yields the same sequence, regardless of what other streams exist.
pub struct RngStream {
    rng: ChaCha12Rng,
}

impl RngStream {
    fn derive(master_seed: u64, label: &str) -> RngStream {
        let mut h = Sha256::new();
        h.update(master_seed.to_le_bytes());
        h.update([0x1f]);
        h.update(label.as_bytes());
        let seed: [u8; 32] = h.finalize().into();
        RngStream {
            rng: ChaCha12Rng::from_seed(seed),
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

/// The discrete-event kernel. Single-threaded within a run; independent
/// runs may execute concurrently since kernels share no state.
pub struct Kernel<P> {
    clock: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Queued<P>>,
    trace: EventTrace,
    master_seed: u64,
}

impl<P: EventPayload> Kernel<P> {
    pub fn new(master_seed: u64) -> Self {
        Kernel {
            clock: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            trace: EventTrace::new(),
            master_seed,
        }
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Enqueues an event; returns its tie-break sequence number.
    pub fn schedule(&mut self, fire_at: SimTime, payload: P) -> Result<u64, KernelError> {
        if fire_at < self.clock {
            return Err(KernelError::SchedulingInPast {
                requested: fire_at.as_secs(),
                clock: self.clock.as_secs(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event {
            fire_at,
            seq,
            payload,
        }));
        Ok(seq)
    }

    /// Pops the next event with `fire_at <= t_end`, advancing the clock and
    /// appending to the trace. Returns `None` once no such event remains.
    pub fn next_before(&mut self, t_end: SimTime) -> Option<Event<P>> {
        let head = self.queue.peek()?;
        if head.0.fire_at > t_end {
            return None;
        }
        let ev = self.queue.pop().expect("peeked event vanished").0;
        debug_assert!(ev.fire_at >= self.clock, "clock must never run backwards");
        self.clock = ev.fire_at;
        self.trace.push(ev.seq, ev.fire_at, ev.payload.trace_label());
        Some(ev)
    }

    /// Dispatches every event with `fire_at <= t_end` through `handler`,
    /// then leaves the clock at `t_end`. An empty queue is not an error.
    pub fn run_until(&mut self, t_end: SimTime, mut handler: impl FnMut(&mut Self, Event<P>)) {
        assert!(t_end >= self.clock, "run_until target precedes clock");
        while let Some(ev) = self.next_before(t_end) {
            handler(self, ev);
        }
        self.clock = t_end;
    }

    pub fn trace(&self) -> &EventTrace {
        &self.trace
    }

    /// Consumes the kernel, yielding the full dispatch trace.
    pub fn into_trace(self) -> EventTrace {
        self.trace
    }

    /// Deterministic stream for `label`, derived from the master seed.
    pub fn stream(&self, label: &str) -> RngStream {
        assert!(!label.is_empty(), "stream label must be non-empty");
        RngStream::derive(self.master_seed, label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    struct Tag(&'static str);
    impl EventPayload for Tag {
        fn trace_label(&self) -> String {
            self.0.to_string()
        }
    }

    fn drain(kernel: &mut Kernel<Tag>, t_end: f64) -> Vec<(f64, &'static str)> {
        let mut seen = Vec::new();
        kernel.run_until(SimTime::from_secs(t_end), |_, ev| {
            seen.push((ev.fire_at.as_secs(), ev.payload.0));
        });
        seen
    }

    #[test]
    fn schedule_at_current_time_dispatches_first() {
        let mut k = Kernel::new(1);
        k.schedule(SimTime::from_secs(0.0), Tag("now")).unwrap();
        k.schedule(SimTime::from_secs(1.0), Tag("later")).unwrap();
        let seen = drain(&mut k, 10.0);
        assert_eq!(seen, vec![(0.0, "now"), (1.0, "later")]);
    }

    #[test]
    fn simultaneous_events_dispatch_in_insertion_order() {
        let mut k = Kernel::new(1);
        k.schedule(SimTime::from_secs(5.0), Tag("a")).unwrap();
        k.schedule(SimTime::from_secs(5.0), Tag("b")).unwrap();
        let seen = drain(&mut k, 10.0);
        assert_eq!(seen, vec![(5.0, "a"), (5.0, "b")]);
    }

    #[test]
    fn scheduling_in_past_is_rejected() {
        let mut k = Kernel::new(1);
        k.schedule(SimTime::from_secs(2.0), Tag("x")).unwrap();
        drain(&mut k, 2.0);
        assert_eq!(k.clock().as_secs(), 2.0);
        let err = k.schedule(SimTime::from_secs(1.0), Tag("late")).unwrap_err();
        assert_eq!(
            err,
            KernelError::SchedulingInPast {
                requested: 1.0,
                clock: 2.0
            }
        );
    }

    #[test]
    fn run_until_on_empty_queue_advances_clock() {
        let mut k = Kernel::<Tag>::new(7);
        k.run_until(SimTime::from_secs(100.0), |_, _| {});
        assert_eq!(k.clock().as_secs(), 100.0);
        assert!(k.trace().is_empty());
    }

    #[test]
    fn run_until_boundary_is_inclusive() {
        let mut k = Kernel::new(1);
        for t in [1.0, 2.0, 3.0] {
            k.schedule(SimTime::from_secs(t), Tag("e")).unwrap();
        }
        let seen = drain(&mut k, 2.0);
        assert_eq!(seen.len(), 2);
        assert_eq!(k.pending(), 1);
        assert_eq!(k.clock().as_secs(), 2.0);
    }

    #[test]
    fn identical_runs_produce_identical_digests() {
        let run = || {
            let mut k = Kernel::new(42);
            let mut rng = k.stream("noise");
            for i in 0..50 {
                let t = (rng.next_u64() % 1000) as f64 / 10.0;
                k.schedule(SimTime::from_secs(t), Tag(if i % 2 == 0 { "a" } else { "b" }))
                    .unwrap();
            }
            drain(&mut k, 200.0);
            k.trace().digest_hex()
        };
        let d1 = run();
        let d2 = run();
        assert_eq!(d1, d2);
        assert_eq!(d1.len(), 64);
        assert!(d1.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
    }

    #[test]
    fn same_label_returns_same_sequence() {
        let k = Kernel::<Tag>::new(9);
        let mut s1 = k.stream("mobility/node-1");
        let mut s2 = k.stream("mobility/node-1");
        let a: Vec<u64> = (0..64).map(|_| s1.next_u64()).collect();
        let b: Vec<u64> = (0..64).map(|_| s2.next_u64()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_labels_diverge_across_many_seeds() {
        for seed in 0..100u64 {
            let k = Kernel::<Tag>::new(seed);
            let mut sa = k.stream("a");
            let mut sb = k.stream("b");
            let a: Vec<u64> = (0..64).map(|_| sa.next_u64()).collect();
            let b: Vec<u64> = (0..64).map(|_| sb.next_u64()).collect();
            assert_ne!(a, b, "streams 'a' and 'b' collided for seed {seed}");
        }
    }

    #[test]
    fn adjacent_master_seeds_diverge() {
        for seed in 0..100u64 {
            let ka = Kernel::<Tag>::new(seed);
            let kb = Kernel::<Tag>::new(seed + 1);
            let a: Vec<u64> = {
                let mut s = ka.stream("mobility/node-7");
                (0..64).map(|_| s.next_u64()).collect()
            };
            let b: Vec<u64> = {
                let mut s = kb.stream("mobility/node-7");
                (0..64).map(|_| s.next_u64()).collect()
            };
            assert_ne!(a, b, "seeds {seed} and {} collided", seed + 1);
        }
    }

    #[test]
    fn trace_records_dispatch_order() {
        let mut k = Kernel::new(3);
        k.schedule(SimTime::from_secs(2.0), Tag("second")).unwrap();
        k.schedule(SimTime::from_secs(1.0), Tag("first")).unwrap();
        drain(&mut k, 5.0);
        let labels: Vec<&str> = k.trace().records().iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, vec!["first", "second"]);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dispatch_strictly_follows_time_then_seq(times in proptest::collection::vec(0u32..1000, 1..200)) {
                let mut k = Kernel::new(5);
                for t in &times {
                    k.schedule(SimTime::from_secs(*t as f64 / 10.0), Tag("e")).unwrap();
                }
                let mut dispatched: Vec<(SimTime, u64)> = Vec::new();
                let mut clocks: Vec<SimTime> = Vec::new();
                k.run_until(SimTime::from_secs(1e4), |kernel, ev| {
                    clocks.push(kernel.clock());
                    dispatched.push((ev.fire_at, ev.seq));
                });
                prop_assert_eq!(dispatched.len(), times.len());
                for w in dispatched.windows(2) {
                    prop_assert!(w[0] < w[1], "order violated: {:?} then {:?}", w[0], w[1]);
                }
                for w in clocks.windows(2) {
                    prop_assert!(w[0] <= w[1], "clock ran backwards");
                }
            }

            #[test]
            fn replaying_a_seed_reproduces_the_digest(seed in 0u64..1000) {
                let run = |seed: u64| {
                    let mut k = Kernel::new(seed);
                    let mut rng = k.stream("load");
                    for _ in 0..60 {
                        let t = (rng.next_u64() % 500) as f64 / 7.0;
                        k.schedule(SimTime::from_secs(t), Tag("x")).unwrap();
                    }
                    drain(&mut k, 100.0);
                    k.trace().digest_hex()
                };
                prop_assert_eq!(run(seed), run(seed));
            }
        }
    }
}
