//! Nodes, the event payload type and the dispatch loop that ties memory,
//! IOMMU, engine and driver together.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::driver::{Driver, DriverConfig, TaskletWork};
use crate::mem::{AddressSpace, CostModel, MemError, MemoryManager, DEFAULT_PIN_LIMIT, DEFAULT_THP_RANGE_PAGES, DEFAULT_VA_WIDTH};
use crate::rdma::{Engine, EngineConfig, EngineError, NodeCoord, Packet, Response, TransferId, WireCostModel, MAX_TRANSFERS};
use crate::sim::{Counter, EventQueue, Metrics, SimRng, SimTime, TraceLabel};
use crate::smmu::{FaultConfig, SctlrFlags, Smmu, SmmuConfig, SmmuError, NUM_CONTEXT_BANKS};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("process ({pdid}, {proc_idx}) killed by segmentation fault at {va:#x}")]
    ProcessKilled { pdid: u16, proc_idx: u8, va: u64 },
    #[error("no address space bound for ({pdid}, {proc_idx})")]
    UnboundDomain { pdid: u16, proc_idx: u8 },
    #[error("no free context bank")]
    NoFreeBank,
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error(transparent)]
    Smmu(#[from] SmmuError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl SimError {
    pub fn is_invariant(&self) -> bool {
        matches!(self, SimError::Invariant(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    SourceBurst { node: usize, xfer: TransferId, txn: usize, seq: u16 },
    LinkPump { node: usize },
    PacketArrive { node: usize, pkt: Packet },
    ResponseArrive { node: usize, resp: Response },
    Timeout { node: usize, xfer: TransferId, txn: usize, seq: u16 },
    MailboxArrive { node: usize, raw: u64 },
    Irq { node: usize, cb: usize },
    Tasklet { node: usize, work: TaskletWork },
    NetlinkDeliver { node: usize, pdid: u16, proc_idx: u8, msg: String },
    TransferDone { node: usize, xfer: TransferId },
    ThpTick { node: usize },
}

impl TraceLabel for Event {
    fn tag(&self) -> &'static str {
        match self {
            Event::SourceBurst { .. } => "src_burst",
            Event::LinkPump { .. } => "link_pump",
            Event::PacketArrive { .. } => "pkt",
            Event::ResponseArrive { resp, .. } if resp.is_ack() => "ack",
            Event::ResponseArrive { .. } => "nack",
            Event::Timeout { .. } => "timeout",
            Event::MailboxArrive { .. } => "mailbox",
            Event::Irq { .. } => "irq",
            Event::Tasklet { .. } => "tasklet",
            Event::NetlinkDeliver { .. } => "netlink",
            Event::TransferDone { .. } => "done",
            Event::ThpTick { .. } => "thp",
        }
    }

    fn detail(&self) -> String {
        match self {
            Event::SourceBurst { node, xfer, txn, seq } | Event::Timeout { node, xfer, txn, seq } => {
                format!("node={node} xfer={} txn={txn} seq={seq}", xfer.0)
            }
            Event::LinkPump { node } | Event::ThpTick { node } => format!("node={node}"),
            Event::PacketArrive { node, pkt } => format!(
                "node={node} trid={} seq={} idx={} va={:#x} len={}",
                pkt.trid,
                pkt.seq,
                pkt.index,
                pkt.dst_va,
                pkt.data.len()
            ),
            Event::ResponseArrive { node, resp } => format!(
                "node={node} trid={} seq={} idx={} err={}",
                resp.trid, resp.seq, resp.index, resp.errorcode
            ),
            Event::MailboxArrive { node, raw } => format!("node={node} raw={raw:#018x}"),
            Event::Irq { node, cb } => format!("node={node} cb={cb}"),
            Event::Tasklet { node, work } => format!("node={node} {work:?}"),
            Event::NetlinkDeliver { node, pdid, proc_idx, msg } => {
                format!("node={node} pd={pdid} proc={proc_idx} msg={msg}")
            }
            Event::TransferDone { node, xfer } => format!("node={node} xfer={}", xfer.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ThpConfig {
    pub period_ns: u64,
    pub range_pages: u64,
    pub max_ticks: u64,
}

impl Default for ThpConfig {
    fn default() -> Self {
        ThpConfig { period_ns: 500_000, range_pages: DEFAULT_THP_RANGE_PAGES, max_ticks: 4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub wire: WireCostModel,
    pub engine: EngineConfig,
    pub smmu: SmmuConfig,
    pub sctlr: SctlrFlags,
    pub driver: DriverConfig,
    pub costs: CostModel,
    pub pin_limit: u64,
    pub va_width: u32,
    pub thp: Option<ThpConfig>,
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            wire: WireCostModel::default(),
            engine: EngineConfig::default(),
            smmu: SmmuConfig::default(),
            sctlr: SctlrFlags { hupcf: true, ..SctlrFlags::default() },
            driver: DriverConfig::default(),
            costs: CostModel::default(),
            pin_limit: DEFAULT_PIN_LIMIT,
            va_width: DEFAULT_VA_WIDTH,
            thp: None,
            trace: false,
        }
    }
}

impl SimConfig {
    /// Loopback runs on one node; any hop count puts the peer on a second.
    pub fn node_count(&self) -> usize {
        if self.wire.hops == 0 {
            1
        } else {
            2
        }
    }
}

pub struct Node {
    pub coord: NodeCoord,
    pub mem: MemoryManager,
    pub smmu: Smmu,
    pub engine: Engine,
    pub driver: Driver,
}

pub struct Simulation {
    pub cfg: SimConfig,
    pub nodes: Vec<Node>,
    pub queue: EventQueue<Event>,
    pub metrics: Metrics,
    pub(crate) thp_rng: ChaCha8Rng,
    pub(crate) thp_ticks: u64,
    done: BTreeMap<(usize, TransferId), SimTime>,
}

/// What the caller wants moved from where.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransferRequest {
    pub pdid: u16,
    pub proc_idx: u8,
    pub channel: u8,
    pub src_va: u64,
    pub dst_va: u64,
    pub len: u64,
    pub dst_node: usize,
}

impl Simulation {
    pub fn new(cfg: SimConfig, seed: u64) -> Self {
        let rng = SimRng::new(seed);
        let nodes = (0..cfg.node_count())
            .map(|i| Node {
                coord: NodeCoord(i as u32),
                mem: MemoryManager::new(cfg.costs.clone()),
                smmu: Smmu::new(cfg.smmu),
                engine: Engine::new(cfg.engine.clone()),
                driver: Driver::new(cfg.driver.clone()),
            })
            .collect();
        let mut queue = EventQueue::new();
        if cfg.trace {
            queue.enable_trace();
        }
        Simulation {
            cfg,
            nodes,
            queue,
            metrics: Metrics::new(),
            thp_rng: rng.substream("thp"),
            thp_ticks: 0,
            done: BTreeMap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn node_index(&self, coord: u32) -> Option<usize> {
        self.nodes.iter().position(|n| n.coord.0 == coord)
    }

    /// Creates the address space for `(pdid, proc_idx)` on every node, binds a
    /// context bank to it and starts its user thread.
    pub fn add_process(&mut self, pdid: u16, proc_idx: u8) -> Result<(), SimError> {
        let (pin_limit, va_width, sctlr) = (self.cfg.pin_limit, self.cfg.va_width, self.cfg.sctlr);
        for node in &mut self.nodes {
            node.mem.add_space(AddressSpace::new(pdid, proc_idx).with_pin_limit(pin_limit).with_va_width(va_width));
            let cb = (0..NUM_CONTEXT_BANKS)
                .find(|&i| node.smmu.bank(i).map(|b| b.binding.is_none()).unwrap_or(false))
                .ok_or(SimError::NoFreeBank)?;
            node.smmu.init_context_bank(cb, pdid, proc_idx, sctlr)?;
            let channel = node.engine.allocate_packetizer(pdid)?;
            node.driver.register_user(pdid, proc_idx, channel);
        }
        Ok(())
    }

    /// Runs a mutation against one address space and forwards the resulting
    /// translation invalidations to the IOMMU.
    pub fn with_space<T>(
        &mut self,
        node: usize,
        pdid: u16,
        proc_idx: u8,
        f: impl FnOnce(&mut AddressSpace, &mut crate::mem::FrameAllocator, &CostModel) -> Result<T, MemError>,
    ) -> Result<T, SimError> {
        let n = &mut self.nodes[node];
        let (space, frames, costs) = n.mem.parts(pdid, proc_idx)?;
        let out = f(space, frames, costs);
        self.sync_invalidations(node);
        Ok(out?)
    }

    pub fn sync_invalidations(&mut self, node: usize) {
        let n = &mut self.nodes[node];
        let mut pending = Vec::new();
        for space in n.mem.spaces_mut() {
            let (pd, pr) = (space.pdid(), space.proc_idx());
            for r in space.drain_invalidations() {
                pending.push((pd, pr, r));
            }
        }
        for (pd, pr, r) in pending {
            if r.start < r.end {
                n.smmu.invalidate_space(pd, pr, r);
            }
        }
    }

    pub fn completion(&self, node: usize, xfer: TransferId) -> Option<SimTime> {
        self.done.get(&(node, xfer)).copied()
    }

    /// Dispatches events until the transfer has completed. Fails if it has
    /// not completed by `limit`.
    pub fn run_until_done(&mut self, node: usize, xfer: TransferId, limit: SimTime) -> Result<SimTime, SimError> {
        loop {
            if let Some(t) = self.completion(node, xfer) {
                return Ok(t);
            }
            let Some(ev) = self.queue.pop_due(limit) else {
                return Err(SimError::Invariant(format!(
                    "transfer {} on node {node} incomplete at {} ({} events pending)",
                    xfer.0,
                    self.now(),
                    self.queue.len()
                )));
            };
            self.dispatch(ev.payload)?;
        }
    }

    /// Dispatches everything due up to `limit`.
    pub fn run_until_idle(&mut self, limit: SimTime) -> Result<SimTime, SimError> {
        while let Some(ev) = self.queue.pop_due(limit) {
            self.dispatch(ev.payload)?;
        }
        Ok(self.now())
    }

    pub fn dispatch(&mut self, ev: Event) -> Result<(), SimError> {
        match ev {
            Event::SourceBurst { node, xfer, txn, seq } => self.on_source_burst(node, xfer, txn, seq)?,
            Event::LinkPump { node } => self.on_link_pump(node),
            Event::PacketArrive { node, pkt } => self.rx_packet(node, pkt)?,
            Event::ResponseArrive { node, resp } => self.on_response(node, resp)?,
            Event::Timeout { node, xfer, txn, seq } => self.on_timeout(node, xfer, txn, seq)?,
            Event::MailboxArrive { node, raw } => {
                self.mailbox_dispatch(node, raw)?;
            }
            Event::Irq { node, cb } => self.context_fault_irq(node, cb),
            Event::Tasklet { node, work } => self.on_tasklet(node, work)?,
            Event::NetlinkDeliver { node, pdid, proc_idx, msg } => self.on_netlink(node, pdid, proc_idx, msg)?,
            Event::TransferDone { node, xfer } => {
                self.done.insert((node, xfer), self.now());
                self.metrics.incr(Counter::TransfersCompleted);
            }
            Event::ThpTick { node } => self.on_thp_tick(node),
        }
        self.check_cheap_invariants()
    }

    /// Starts a new burst of periodic huge-page passes on a node, if
    /// configured. Each burst is capped at `max_ticks` passes.
    pub fn arm_thp(&mut self, node: usize, first_delay_ns: u64) {
        if self.cfg.thp.is_some() {
            self.thp_ticks = 0;
            self.queue.schedule(first_delay_ns, Event::ThpTick { node });
        }
    }

    fn on_thp_tick(&mut self, node: usize) {
        let Some(thp) = self.cfg.thp else { return };
        if self.thp_ticks >= thp.max_ticks {
            return;
        }
        self.thp_ticks += 1;
        let rng = &mut self.thp_rng;
        for space in self.nodes[node].mem.spaces_mut() {
            if space.thp_tick(thp.range_pages, rng).is_some() {
                self.metrics.incr(Counter::ThpInvalidations);
            }
        }
        self.sync_invalidations(node);
        if self.nodes[node].engine.active_transfers() > 0 {
            self.queue.schedule(thp.period_ns, Event::ThpTick { node });
        }
    }

    fn check_cheap_invariants(&self) -> Result<(), SimError> {
        let mut total = 0;
        for (i, n) in self.nodes.iter().enumerate() {
            total += n.engine.active_transfers();
            if let Some(msg) = n.engine.outstanding_violation() {
                return Err(SimError::Invariant(format!("node {i}: {msg}")));
            }
            if n.engine.fifo.len() > n.engine.fifo.depth() {
                return Err(SimError::Invariant(format!("node {i}: fault FIFO over depth")));
            }
            for (id, tbu) in n.smmu.tbus() {
                if tbu.outstanding > tbu.outstanding_limit {
                    return Err(SimError::Invariant(format!("node {i}: TBU {id} outstanding over limit")));
                }
            }
        }
        if total > MAX_TRANSFERS {
            return Err(SimError::Invariant(format!("{total} concurrent transfers")));
        }
        Ok(())
    }

    /// Full scans: pin accounting, page-state rules and TLB coherence.
    pub fn check_full_invariants(&self) -> Result<(), SimError> {
        self.check_cheap_invariants()?;
        for (i, n) in self.nodes.iter().enumerate() {
            for s in n.mem.spaces() {
                s.check_invariants()
                    .map_err(|e| SimError::Invariant(format!("node {i} space ({}, {}): {e}", s.pdid(), s.proc_idx())))?;
            }
            n.smmu
                .check_tlb_coherence(&n.mem)
                .map_err(|e| SimError::Invariant(format!("node {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn take_trace(&mut self) -> Option<Vec<u8>> {
        self.queue.take_trace()
    }

    pub(crate) fn stall_mode(&self) -> bool {
        self.cfg.sctlr.cfcfg == FaultConfig::Stall
    }
}
