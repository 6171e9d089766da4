//! Deterministic discrete-event core.
//!
//! Everything in a simulation instance hangs off one virtual clock measured in
//! nanoseconds. Events are totally ordered by `(fire_at, sequence)`, where the
//! sequence is a counter bumped on every scheduling call, so two events due at
//! the same instant always dispatch in the order they were scheduled.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Virtual time in nanoseconds since simulation start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn ns(self) -> u64 {
        self.0
    }

    pub fn as_us(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn after(self, delay_ns: u64) -> SimTime {
        SimTime(self.0.saturating_add(delay_ns))
    }

    pub fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Handle returned by [`EventQueue::schedule`]; carries the full ordering key
/// so cancellation is a single map removal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle {
    fire_at: SimTime,
    sequence: u64,
}

impl EventHandle {
    pub fn fire_at(&self) -> SimTime {
        self.fire_at
    }
}

/// Short tag and free-form detail used by the event trace.
pub trait TraceLabel {
    fn tag(&self) -> &'static str;
    fn detail(&self) -> String;
}

/// A dispatched event.
#[derive(Debug)]
pub struct Fired<P> {
    pub at: SimTime,
    pub sequence: u64,
    pub payload: P,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub scheduled: u64,
    pub dispatched: u64,
    pub cancelled: u64,
}

/// Ordered event queue plus the virtual clock.
pub struct EventQueue<P> {
    now: SimTime,
    next_sequence: u64,
    pending: BTreeMap<(SimTime, u64), P>,
    stats: QueueStats,
    trace: Option<Vec<u8>>,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            now: SimTime::ZERO,
            next_sequence: 0,
            pending: BTreeMap::new(),
            stats: QueueStats::default(),
            trace: None,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn schedule(&mut self, delay_ns: u64, payload: P) -> EventHandle {
        let fire_at = self.now.after(delay_ns);
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.pending.insert((fire_at, sequence), payload);
        self.stats.scheduled += 1;
        EventHandle { fire_at, sequence }
    }

    /// Returns `true` iff the event was still pending.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        let removed = self
            .pending
            .remove(&(handle.fire_at, handle.sequence))
            .is_some();
        if removed {
            self.stats.cancelled += 1;
        }
        removed
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.pending.contains_key(&(handle.fire_at, handle.sequence))
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn next_fire_at(&self) -> Option<SimTime> {
        self.pending.keys().next().map(|(t, _)| *t)
    }

    pub fn stats(&self) -> QueueStats {
        self.stats
    }

    /// Moves the clock forward without dispatching. Callers must have drained
    /// every event due at or before `t` first.
    pub fn advance_clock(&mut self, t: SimTime) {
        debug_assert!(self.next_fire_at().is_none_or(|n| n > t));
        if t > self.now {
            self.now = t;
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Option<Vec<u8>> {
        self.trace.take()
    }
}

impl<P: TraceLabel> EventQueue<P> {
    /// Removes the next event if it is due at or before `limit`, advancing the
    /// clock to its fire time.
    pub fn pop_due(&mut self, limit: SimTime) -> Option<Fired<P>> {
        let (&(at, sequence), _) = self.pending.iter().next()?;
        if at > limit {
            return None;
        }
        let payload = self.pending.remove(&(at, sequence)).expect("head exists");
        debug_assert!(at >= self.now);
        self.now = at;
        self.stats.dispatched += 1;
        if let Some(buf) = self.trace.as_mut() {
            let _ = writeln!(
                buf,
                "{} {} {} {}",
                at.0,
                sequence,
                payload.tag(),
                payload.detail()
            );
        }
        Some(Fired {
            at,
            sequence,
            payload,
        })
    }

    /// Dispatches events in order until the queue is empty or the next event
    /// lies beyond `limit`. Returns the clock afterwards.
    pub fn run_until<F>(&mut self, limit: SimTime, mut handler: F) -> SimTime
    where
        F: FnMut(&mut EventQueue<P>, Fired<P>),
    {
        while let Some(ev) = self.pop_due(limit) {
            handler(self, ev);
        }
        self.now
    }
}

/// Monotonic counters shared by every component of a simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Counter {
    TimeoutsFired,
    HandlerInvocations,
    FifoPushes,
    FifoDups,
    FifoDrops,
    RapfSent,
    RapfRetransmits,
    RapfStale,
    RapfPdidMismatch,
    RapfUnknownTrid,
    PagesTouched,
    NackCount,
    StaleNacks,
    UnknownPdidNacks,
    IrqsRaised,
    SpuriousIrqs,
    SendHandlerRuns,
    RcvHandlerRuns,
    SegfaultsAbsorbed,
    PacketsSent,
    PacketsWithheld,
    Retransmissions,
    FifoProtocolAnomalies,
    ThpInvalidations,
    DriverTimeNs,
    IrqTimeNs,
    TaskletTimeNs,
    DedupSkips,
    TransfersCompleted,
}

impl Counter {
    pub const ALL: [Counter; 29] = [
        Counter::TimeoutsFired,
        Counter::HandlerInvocations,
        Counter::FifoPushes,
        Counter::FifoDups,
        Counter::FifoDrops,
        Counter::RapfSent,
        Counter::RapfRetransmits,
        Counter::RapfStale,
        Counter::RapfPdidMismatch,
        Counter::RapfUnknownTrid,
        Counter::PagesTouched,
        Counter::NackCount,
        Counter::StaleNacks,
        Counter::UnknownPdidNacks,
        Counter::IrqsRaised,
        Counter::SpuriousIrqs,
        Counter::SendHandlerRuns,
        Counter::RcvHandlerRuns,
        Counter::SegfaultsAbsorbed,
        Counter::PacketsSent,
        Counter::PacketsWithheld,
        Counter::Retransmissions,
        Counter::FifoProtocolAnomalies,
        Counter::ThpInvalidations,
        Counter::DriverTimeNs,
        Counter::IrqTimeNs,
        Counter::TaskletTimeNs,
        Counter::DedupSkips,
        Counter::TransfersCompleted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Counter::TimeoutsFired => "timeouts_fired",
            Counter::HandlerInvocations => "handler_invocations",
            Counter::FifoPushes => "fifo_pushes",
            Counter::FifoDups => "fifo_dups",
            Counter::FifoDrops => "fifo_drops",
            Counter::RapfSent => "rapf_sent",
            Counter::RapfRetransmits => "rapf_retransmits",
            Counter::RapfStale => "rapf_stale",
            Counter::RapfPdidMismatch => "rapf_pdid_mismatch",
            Counter::RapfUnknownTrid => "rapf_unknown_trid",
            Counter::PagesTouched => "pages_touched",
            Counter::NackCount => "nack_count",
            Counter::StaleNacks => "stale_nacks",
            Counter::UnknownPdidNacks => "unknown_pdid_nacks",
            Counter::IrqsRaised => "irqs_raised",
            Counter::SpuriousIrqs => "spurious_irqs",
            Counter::SendHandlerRuns => "send_handler_runs",
            Counter::RcvHandlerRuns => "rcv_handler_runs",
            Counter::SegfaultsAbsorbed => "segfaults_absorbed",
            Counter::PacketsSent => "packets_sent",
            Counter::PacketsWithheld => "packets_withheld",
            Counter::Retransmissions => "retransmissions",
            Counter::FifoProtocolAnomalies => "fifo_protocol_anomalies",
            Counter::ThpInvalidations => "thp_invalidations",
            Counter::DriverTimeNs => "driver_time_ns",
            Counter::IrqTimeNs => "irq_time_ns",
            Counter::TaskletTimeNs => "tasklet_time_ns",
            Counter::DedupSkips => "dedup_skips",
            Counter::TransfersCompleted => "transfers_completed",
        }
    }
}

/// Running latency statistics in nanoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LatencyAcc {
    pub count: u64,
    pub sum_ns: u64,
    pub min_ns: u64,
    pub max_ns: u64,
}

impl LatencyAcc {
    pub fn record(&mut self, ns: u64) {
        if self.count == 0 {
            self.min_ns = ns;
            self.max_ns = ns;
        } else {
            self.min_ns = self.min_ns.min(ns);
            self.max_ns = self.max_ns.max(ns);
        }
        self.count += 1;
        self.sum_ns += ns;
    }

    pub fn mean_ns(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum_ns as f64 / self.count as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Metrics {
    counters: BTreeMap<Counter, u64>,
}

impl Metrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn incr(&mut self, c: Counter) {
        self.add(c, 1);
    }

    pub fn add(&mut self, c: Counter, n: u64) {
        *self.counters.entry(c).or_insert(0) += n;
    }

    pub fn get(&self, c: Counter) -> u64 {
        self.counters.get(&c).copied().unwrap_or(0)
    }

    /// Counter-wise difference against an earlier snapshot.
    pub fn delta_since(&self, earlier: &Metrics) -> Metrics {
        let mut out = Metrics::new();
        for c in Counter::ALL {
            let d = self.get(c) - earlier.get(c);
            if d > 0 {
                out.add(c, d);
            }
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (Counter, u64)> + '_ {
        Counter::ALL.into_iter().map(|c| (c, self.get(c)))
    }
}

/// Root of a simulation's randomness. Components draw from labelled
/// substreams so adding a consumer never shifts another consumer's draws.
#[derive(Clone, Debug)]
pub struct SimRng {
    seed: u64,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        SimRng { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn substream(&self, label: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ fnv1a(label.as_bytes())))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
