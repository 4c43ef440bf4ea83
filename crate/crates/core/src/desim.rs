//! Deterministic discrete-event simulation kernel: an integer-nanosecond
//! clock, a totally ordered event queue with reproducible tie-breaking,
//! seeded portable random streams, and trace recording.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::io::Write;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Simulated time in nanoseconds. All timing constants of interest
/// (0.96 us, 122.4 us, ...) are exactly representable.
pub type Nanos = u64;

/// Nanoseconds per microsecond.
pub const NS_PER_US: u64 = 1_000;
/// Nanoseconds per millisecond.
pub const NS_PER_MS: u64 = 1_000_000;
/// Nanoseconds per second.
pub const NS_PER_S: u64 = 1_000_000_000;

/// Convert a microsecond value (possibly fractional) to nanoseconds.
pub fn us_to_ns(us: f64) -> Nanos {
    (us * 1_000.0).round() as Nanos
}

/// Convert seconds to nanoseconds.
pub fn s_to_ns(s: f64) -> Nanos {
    (s * 1_000_000_000.0).round() as Nanos
}

/// Fixed-precision microsecond rendering of a nanosecond timestamp
/// ("123.360"). Used by every CSV writer so outputs are byte-stable.
pub fn format_us(ns: Nanos) -> String {
    format!("{}.{:03}", ns / 1_000, ns % 1_000)
}

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

/// Broad classification of an event, derived from its payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    FrameArrival,
    TransmissionComplete,
    GateChange,
    TimerFire,
    ControlMessage,
}

/// Implemented by the simulation-specific payload enum.
pub trait EventPayload {
    fn kind(&self) -> EventKind;
}

/// A scheduled event. `(time_ns, seq)` totally orders all events of a run;
/// `seq` is the monotone insertion counter used for tie-breaking.
#[derive(Debug, Clone)]
pub struct Event<P> {
    pub time_ns: Nanos,
    pub seq: u64,
    pub payload: P,
}

impl<P: EventPayload> Event<P> {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }
}

struct HeapEntry<P> {
    time_ns: Nanos,
    seq: u64,
    payload: P,
}

impl<P> PartialEq for HeapEntry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.time_ns == other.time_ns && self.seq == other.seq
    }
}
impl<P> Eq for HeapEntry<P> {}
impl<P> PartialOrd for HeapEntry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for HeapEntry<P> {
    // Reversed so the BinaryHeap pops the smallest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time_ns, other.seq).cmp(&(self.time_ns, self.seq))
    }
}

/// Cancellation handle for a scheduled event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Handle(u64);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot schedule at {requested_ns} ns, current time is {now_ns} ns")]
pub struct SchedulingInPast {
    pub requested_ns: Nanos,
    pub now_ns: Nanos,
}

// ---------------------------------------------------------------------------
// Kernel
// ---------------------------------------------------------------------------

/// The event queue and clock of one simulation run. Logically
/// single-threaded; independent kernels may run concurrently.
pub struct Kernel<P> {
    now_ns: Nanos,
    next_seq: u64,
    heap: BinaryHeap<HeapEntry<P>>,
    cancelled: HashSet<u64>,
    seed: u64,
}

impl<P: EventPayload> Kernel<P> {
    pub fn new(seed: u64) -> Self {
        Self { now_ns: 0, next_seq: 0, heap: BinaryHeap::new(), cancelled: HashSet::new(), seed }
    }

    pub fn now(&self) -> Nanos {
        self.now_ns
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Deterministic random stream for this run, keyed by a label. Same
    /// (seed, label) always yields the same sequence; distinct labels yield
    /// independent streams.
    pub fn rng(&self, label: &str) -> ChaCha8Rng {
        rng(self.seed, label)
    }

    /// Enqueue an event at an absolute time.
    pub fn schedule_at(&mut self, time_ns: Nanos, payload: P) -> Result<Handle, SchedulingInPast> {
        if time_ns < self.now_ns {
            return Err(SchedulingInPast { requested_ns: time_ns, now_ns: self.now_ns });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(HeapEntry { time_ns, seq, payload });
        Ok(Handle(seq))
    }

    /// Enqueue an event `dt` nanoseconds from now.
    pub fn schedule_in(&mut self, dt_ns: Nanos, payload: P) -> Handle {
        let t = self.now_ns + dt_ns;
        self.schedule_at(t, payload).expect("future time")
    }

    /// Cancel a scheduled event; a no-op if it already fired.
    pub fn cancel(&mut self, handle: Handle) {
        self.cancelled.insert(handle.0);
    }

    /// Pop the next event with `time <= t_end`, advancing the clock to its
    /// timestamp. Returns `None` when the queue holds no such event.
    pub fn next_event(&mut self, t_end_ns: Nanos) -> Option<Event<P>> {
        loop {
            let top_time = self.heap.peek()?.time_ns;
            if top_time > t_end_ns {
                return None;
            }
            let entry = self.heap.pop().expect("peeked");
            if self.cancelled.remove(&entry.seq) {
                continue;
            }
            debug_assert!(entry.time_ns >= self.now_ns, "event queue went backwards");
            self.now_ns = entry.time_ns;
            return Some(Event { time_ns: entry.time_ns, seq: entry.seq, payload: entry.payload });
        }
    }

    /// Advance the clock to `t_end` after draining events (end-of-run).
    pub fn finish_at(&mut self, t_end_ns: Nanos) {
        if t_end_ns > self.now_ns {
            self.now_ns = t_end_ns;
        }
    }

    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }
}

/// A simulation that owns a kernel and handles its events.
pub trait Simulation {
    type P: EventPayload;
    fn kernel_mut(&mut self) -> &mut Kernel<Self::P>;
    fn handle(&mut self, ev: Event<Self::P>);
}

/// Drive a simulation until `t_end`, processing every event with
/// `time <= t_end`. Identical inputs and seed produce identical event
/// sequences.
pub fn run_until<S: Simulation>(sim: &mut S, t_end_ns: Nanos) {
    while let Some(ev) = sim.kernel_mut().next_event(t_end_ns) {
        sim.handle(ev);
    }
    sim.kernel_mut().finish_at(t_end_ns);
}

// ---------------------------------------------------------------------------
// Portable seeded randomness
// ---------------------------------------------------------------------------

// FNV-1a 64-bit, hand-rolled because the std hasher is not stable across
// releases and the label hash feeds seed material.
fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic, portable random stream for `(seed, label)`.
///
/// The generator is ChaCha8 keyed by the seed and the FNV-1a hash of the
/// label, so streams are stable across platforms and toolchain versions.
pub fn rng(seed: u64, label: &str) -> ChaCha8Rng {
    let label_hash = fnv1a64(label);
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&label_hash.to_le_bytes());
    key[16..24].copy_from_slice(&(seed ^ label_hash.rotate_left(32)).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

// ---------------------------------------------------------------------------
// Event trace
// ---------------------------------------------------------------------------

/// What happened to a frame at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceAction {
    Enqueued,
    Sent,
    Received,
    DroppedIngress,
    DroppedNoRule,
    ToController,
}

impl TraceAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceAction::Enqueued => "enqueued",
            TraceAction::Sent => "sent",
            TraceAction::Received => "received",
            TraceAction::DroppedIngress => "dropped_ingress",
            TraceAction::DroppedNoRule => "dropped_no_rule",
            TraceAction::ToController => "to_controller",
        }
    }
}

/// One trace record; the ground truth for latency and security metrics.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub t_ns: Nanos,
    pub node: String,
    pub port: Option<u32>,
    pub action: TraceAction,
    pub frame_id: u64,
    pub cf_id: Option<u32>,
    pub pcp: u8,
    pub wire_bytes: u32,
    pub detail: String,
}

/// Append-only, time-ordered record of every frame event.
#[derive(Debug, Default)]
pub struct EventTrace {
    records: Vec<TraceRecord>,
}

impl EventTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a record; timestamps must be non-decreasing.
    pub fn push(&mut self, rec: TraceRecord) {
        if let Some(last) = self.records.last() {
            assert!(rec.t_ns >= last.t_ns, "trace timestamps must be non-decreasing");
        }
        self.records.push(rec);
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

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "t_us,node,port,action,frame_id,cf_id,pcp,wire_bytes,detail")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                format_us(r.t_ns),
                r.node,
                r.port.map(|p| p.to_string()).unwrap_or_default(),
                r.action.as_str(),
                r.frame_id,
                r.cf_id.map(|c| c.to_string()).unwrap_or_default(),
                r.pcp,
                r.wire_bytes,
                r.detail
            )?;
        }
        Ok(())
    }

    /// The whole trace as CSV text (used for byte-identity checks).
    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to vec");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[derive(Debug, Clone, PartialEq, Eq)]
    enum TestPayload {
        Timer(u32),
    }

    impl EventPayload for TestPayload {
        fn kind(&self) -> EventKind {
            EventKind::TimerFire
        }
    }

    struct Collector {
        kernel: Kernel<TestPayload>,
        fired: Vec<(Nanos, u32)>,
    }

    impl Simulation for Collector {
        type P = TestPayload;
        fn kernel_mut(&mut self) -> &mut Kernel<TestPayload> {
            &mut self.kernel
        }
        fn handle(&mut self, ev: Event<TestPayload>) {
            let TestPayload::Timer(id) = ev.payload;
            self.fired.push((ev.time_ns, id));
        }
    }

    #[test]
    fn equal_times_fire_in_insertion_order() {
        let mut c = Collector { kernel: Kernel::new(0), fired: Vec::new() };
        c.kernel.schedule_at(100, TestPayload::Timer(1)).unwrap();
        c.kernel.schedule_at(100, TestPayload::Timer(2)).unwrap();
        c.kernel.schedule_at(50, TestPayload::Timer(3)).unwrap();
        run_until(&mut c, 1_000);
        assert_eq!(c.fired, vec![(50, 3), (100, 1), (100, 2)]);
        assert_eq!(c.kernel.now(), 1_000);
    }

    #[test]
    fn schedule_at_now_fires_before_later_events() {
        let mut c = Collector { kernel: Kernel::new(0), fired: Vec::new() };
        c.kernel.schedule_at(0, TestPayload::Timer(1)).unwrap();
        c.kernel.schedule_at(10, TestPayload::Timer(2)).unwrap();
        run_until(&mut c, 10);
        assert_eq!(c.fired, vec![(0, 1), (10, 2)]);
    }

    #[test]
    fn cancelled_events_never_fire() {
        let mut c = Collector { kernel: Kernel::new(0), fired: Vec::new() };
        let h = c.kernel.schedule_at(100, TestPayload::Timer(1)).unwrap();
        c.kernel.schedule_at(200, TestPayload::Timer(2)).unwrap();
        c.kernel.cancel(h);
        run_until(&mut c, 1_000);
        assert_eq!(c.fired, vec![(200, 2)]);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut c = Collector { kernel: Kernel::new(0), fired: Vec::new() };
        c.kernel.schedule_at(100, TestPayload::Timer(1)).unwrap();
        run_until(&mut c, 100);
        let err = c.kernel.schedule_at(50, TestPayload::Timer(2)).unwrap_err();
        assert_eq!(err, SchedulingInPast { requested_ns: 50, now_ns: 100 });
    }

    #[test]
    fn events_beyond_t_end_stay_queued() {
        let mut c = Collector { kernel: Kernel::new(0), fired: Vec::new() };
        c.kernel.schedule_at(100, TestPayload::Timer(1)).unwrap();
        c.kernel.schedule_at(2_000, TestPayload::Timer(2)).unwrap();
        run_until(&mut c, 1_000);
        assert_eq!(c.fired, vec![(100, 1)]);
        assert_eq!(c.kernel.pending(), 1);
    }

    #[test]
    fn rng_streams_are_reproducible_and_independent() {
        let mut a1 = rng(1, "s4_start");
        let mut a2 = rng(1, "s4_start");
        let seq1: Vec<u64> = (0..8).map(|_| a1.random()).collect();
        let seq2: Vec<u64> = (0..8).map(|_| a2.random()).collect();
        assert_eq!(seq1, seq2);

        let mut b = rng(2, "s4_start");
        let other: Vec<u64> = (0..8).map(|_| b.random()).collect();
        assert_ne!(seq1, other);

        let mut c = rng(1, "different_label");
        let third: Vec<u64> = (0..8).map(|_| c.random()).collect();
        assert_ne!(seq1, third);
    }

    #[test]
    fn grid_draw_covers_exactly_the_step_values() {
        // A uniform draw over [0, 1000) us in 50 us steps must be one of 20
        // values.
        for seed in 0..50u64 {
            let mut r = rng(seed, "start_grid");
            let k: u64 = r.random_range(0..20);
            let offset_us = k * 50;
            assert!(offset_us < 1_000 && offset_us.is_multiple_of(50));
        }
    }

    #[test]
    fn trace_rejects_time_regression() {
        let mut t = EventTrace::new();
        let rec = |t_ns| TraceRecord {
            t_ns,
            node: "n".into(),
            port: None,
            action: TraceAction::Sent,
            frame_id: 0,
            cf_id: None,
            pcp: 0,
            wire_bytes: 64,
            detail: String::new(),
        };
        t.push(rec(5));
        t.push(rec(5));
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            t.push(rec(4));
        }));
        assert!(result.is_err());
    }

    #[test]
    fn trace_csv_shape() {
        let mut t = EventTrace::new();
        t.push(TraceRecord {
            t_ns: 122_400,
            node: "SwL".into(),
            port: Some(2),
            action: TraceAction::Received,
            frame_id: 7,
            cf_id: Some(1),
            pcp: 5,
            wire_bytes: 1522,
            detail: "x".into(),
        });
        let csv = t.to_csv_string();
        assert_eq!(
            csv,
            "t_us,node,port,action,frame_id,cf_id,pcp,wire_bytes,detail\n\
             122.400,SwL,2,received,7,1,5,1522,x\n"
        );
    }

    #[test]
    fn formatting_helpers() {
        assert_eq!(format_us(122_400), "122.400");
        assert_eq!(format_us(960), "0.960");
        assert_eq!(format_us(1_000_000), "1000.000");
        assert_eq!(us_to_ns(122.4), 122_400);
        assert_eq!(us_to_ns(0.96), 960);
        assert_eq!(s_to_ns(0.2), 200_000_000);
    }
}
