//! Host side of fault recovery: the IOMMU context-fault interrupt, the two
//! deferred handlers, and the per-process user thread that touches pages and
//! asks the initiator to retransmit.

pub mod netlink;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

pub use netlink::{NetlinkError, NetlinkPageFaultMsg};

use crate::mem::{MemError, VirtAddr};
use crate::rdma::engine::iova_to_va;
use crate::rdma::fifo::FifoError;
use crate::rdma::{encode_iova, NodeCoord};
use crate::sim::Counter;
use crate::system::{Event, SimError, Simulation};

pub const TOUCH_AHEAD_PAGES: u64 = 4;
pub const DEDUP_DEPTH: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HandlerPolicy {
    #[default]
    TouchAPage,
    TouchAhead,
}

impl HandlerPolicy {
    pub fn name(self) -> &'static str {
        match self {
            HandlerPolicy::TouchAPage => "touch_a_page",
            HandlerPolicy::TouchAhead => "touch_ahead",
        }
    }
}

impl fmt::Display for HandlerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HandlerPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "touch_a_page" => Ok(HandlerPolicy::TouchAPage),
            "touch_ahead" => Ok(HandlerPolicy::TouchAhead),
            _ => Err(format!("unknown policy {s:?} (touch_a_page | touch_ahead)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DriverConfig {
    pub policy: HandlerPolicy,
    pub irq_handler_ns: u64,
    pub tasklet_delay_ns: u64,
    pub tasklet_fixed_ns: u64,
    pub netlink_send_ns: u64,
    pub netlink_roundtrip_ns: u64,
    pub pckzer_ns: u64,
    pub fifo_read_ns: u64,
    pub absorb_segfault: bool,
    pub kernel_rapf: bool,
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig {
            policy: HandlerPolicy::TouchAPage,
            irq_handler_ns: 1_500,
            tasklet_delay_ns: 2_000,
            tasklet_fixed_ns: 1_000,
            netlink_send_ns: 500,
            netlink_roundtrip_ns: 12_000,
            pckzer_ns: 1_000,
            fifo_read_ns: 200,
            absorb_segfault: true,
            kernel_rapf: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskletWork {
    Send { pdid: u16, proc_idx: u8, iova: u64 },
    Rcv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TouchResult {
    Touched { paged_in: bool },
    SegfaultAbsorbed,
}

/// Last handled `(trid, seq, page)` keys per source node.
#[derive(Clone, Debug, Default)]
pub struct DedupCache {
    per_src: BTreeMap<u32, VecDeque<(u16, u16, u64)>>,
}

impl DedupCache {
    /// Returns true if the key was already among the last two for `src`;
    /// otherwise records it.
    pub fn seen_or_insert(&mut self, src: u32, key: (u16, u16, u64)) -> bool {
        let q = self.per_src.entry(src).or_default();
        if q.contains(&key) {
            return true;
        }
        if q.len() == DEDUP_DEPTH {
            q.pop_front();
        }
        q.push_back(key);
        false
    }

    pub fn entries(&self, src: u32) -> Vec<(u16, u16, u64)> {
        self.per_src.get(&src).map(|q| q.iter().copied().collect()).unwrap_or_default()
    }
}

#[derive(Clone, Debug)]
pub struct UserThread {
    pub pdid: u16,
    pub proc_idx: u8,
    pub channel: u8,
    pub busy_until: crate::sim::SimTime,
}

#[derive(Clone, Debug)]
pub struct Driver {
    pub cfg: DriverConfig,
    pub cpu_busy_until: crate::sim::SimTime,
    rcv_pending: bool,
    pub dedup: DedupCache,
    users: BTreeMap<(u16, u8), UserThread>,
}

impl Driver {
    pub fn new(cfg: DriverConfig) -> Self {
        Driver { cfg, cpu_busy_until: Default::default(), rcv_pending: false, dedup: DedupCache::default(), users: BTreeMap::new() }
    }

    pub fn register_user(&mut self, pdid: u16, proc_idx: u8, channel: u8) {
        self.users
            .insert((pdid, proc_idx), UserThread { pdid, proc_idx, channel, busy_until: Default::default() });
    }

    pub fn user(&self, pdid: u16, proc_idx: u8) -> Option<&UserThread> {
        self.users.get(&(pdid, proc_idx))
    }
}

impl Simulation {
    pub(crate) fn context_fault_irq(&mut self, node: usize, cb: usize) {
        let n = &mut self.nodes[node];
        let Ok(snap) = n.smmu.read_and_clear_fault(cb) else {
            self.metrics.incr(Counter::SpuriousIrqs);
            return;
        };
        let cfg = &n.driver.cfg;
        let (handler_ns, delay) = (cfg.irq_handler_ns, cfg.irq_handler_ns + cfg.tasklet_delay_ns);
        self.metrics.incr(Counter::IrqsRaised);
        self.metrics.add(Counter::IrqTimeNs, handler_ns);
        self.metrics.add(Counter::DriverTimeNs, handler_ns);
        let Some(b) = n.smmu.bank(cb).ok().and_then(|b| b.binding) else { return };
        if !snap.is_write {
            let work = TaskletWork::Send { pdid: b.pdid, proc_idx: b.proc_idx, iova: snap.iova };
            self.queue.schedule(delay, Event::Tasklet { node, work });
        }
        // The receive side is checked on every fault, in case entries are waiting.
        if !self.nodes[node].driver.rcv_pending {
            self.nodes[node].driver.rcv_pending = true;
            self.queue.schedule(delay, Event::Tasklet { node, work: TaskletWork::Rcv });
        }
    }

    /// Tasklets share one CPU and run one at a time.
    pub(crate) fn on_tasklet(&mut self, node: usize, work: TaskletWork) -> Result<(), SimError> {
        let now = self.now();
        let busy = self.nodes[node].driver.cpu_busy_until;
        if busy > now {
            self.queue.schedule(busy.since(now), Event::Tasklet { node, work });
            return Ok(());
        }
        let cost = match work {
            TaskletWork::Send { pdid, proc_idx, iova } => {
                self.metrics.incr(Counter::SendHandlerRuns);
                self.pf_send_handler(node, pdid, proc_idx, iova)?.1
            }
            TaskletWork::Rcv => {
                self.nodes[node].driver.rcv_pending = false;
                self.metrics.incr(Counter::RcvHandlerRuns);
                self.pf_rcv_handler(node)?.1
            }
        };
        self.nodes[node].driver.cpu_busy_until = now.after(cost);
        self.metrics.add(Counter::TaskletTimeNs, cost);
        self.metrics.add(Counter::DriverTimeNs, cost);
        Ok(())
    }

    fn send_netlink(&mut self, node: usize, pdid: u16, proc_idx: u8, msg: &NetlinkPageFaultMsg, at_ns: u64) {
        let text = msg.encode().expect("driver builds in-range messages");
        let delay = at_ns + self.nodes[node].driver.cfg.netlink_roundtrip_ns;
        self.queue.schedule(delay, Event::NetlinkDeliver { node, pdid, proc_idx, msg: text });
    }

    /// Kernel page-in of up to four pages. Returns (pages brought in, cost).
    fn touch_ahead(&mut self, node: usize, pdid: u16, proc_idx: u8, va: VirtAddr, write: bool) -> Result<(u64, u64), SimError> {
        let gup = self.with_space(node, pdid, proc_idx, |s, f, c| {
            Ok::<_, MemError>(s.get_user_pages(va, TOUCH_AHEAD_PAGES, write, f, c))
        })?;
        if gup.faulted_in > 0 {
            self.metrics.incr(Counter::HandlerInvocations);
            self.metrics.add(Counter::PagesTouched, gup.faulted_in);
        }
        Ok((gup.faulted_in, gup.cost_ns))
    }

    /// Source-fault handler. Only makes the pages resident; the initiator's
    /// timeout does the retransmission. Returns (pages brought in, cost).
    pub fn pf_send_handler(&mut self, node: usize, pdid: u16, proc_idx: u8, iova: u64) -> Result<(u64, u64), SimError> {
        if self.nodes[node].mem.space(pdid, proc_idx).is_none() {
            return Err(SimError::UnboundDomain { pdid, proc_idx });
        }
        let cfg = self.nodes[node].driver.cfg.clone();
        let mut cost = cfg.tasklet_fixed_ns;
        let va = VirtAddr(iova);
        match cfg.policy {
            HandlerPolicy::TouchAPage => {
                cost += cfg.netlink_send_ns;
                let msg = NetlinkPageFaultMsg {
                    src_id: self.nodes[node].coord.0,
                    trid: 0,
                    seq: 0,
                    iova: encode_iova(proc_idx, va.page_num())?,
                    pdid,
                    rw: false,
                };
                self.send_netlink(node, pdid, proc_idx, &msg, cost);
                Ok((0, cost))
            }
            HandlerPolicy::TouchAhead => {
                let (pages, c) = self.touch_ahead(node, pdid, proc_idx, va, false)?;
                Ok((pages, cost + c))
            }
        }
    }

    /// Destination-fault handler: drains the fault FIFO, pages in each new
    /// entry and requests a retransmission for it. Returns (entries, cost).
    pub fn pf_rcv_handler(&mut self, node: usize) -> Result<(u64, u64), SimError> {
        let cfg = self.nodes[node].driver.cfg.clone();
        let mut cost = cfg.tasklet_fixed_ns;
        let mut handled = 0;
        loop {
            let entry = match self.nodes[node].engine.fifo.pop_entry() {
                Ok(e) => e,
                Err(FifoError::EmptyFifo) => break,
                Err(_) => {
                    self.metrics.incr(Counter::FifoProtocolAnomalies);
                    break;
                }
            };
            cost += 2 * cfg.fifo_read_ns;
            handled += 1;
            let (proc_idx, va) = iova_to_va(entry.iova);
            let key = (entry.trid, entry.seq, va.page_num());
            if self.nodes[node].driver.dedup.seen_or_insert(entry.src_id, key) {
                self.metrics.incr(Counter::DedupSkips);
                continue;
            }
            let pdid = entry.pdid;
            if self.nodes[node].mem.space(pdid, proc_idx).is_none() {
                continue;
            }
            let msg = NetlinkPageFaultMsg {
                src_id: entry.src_id,
                trid: entry.trid,
                seq: entry.seq,
                iova: entry.iova,
                pdid,
                rw: true,
            };
            match cfg.policy {
                HandlerPolicy::TouchAPage => {
                    cost += cfg.netlink_send_ns;
                    self.send_netlink(node, pdid, proc_idx, &msg, cost);
                }
                HandlerPolicy::TouchAhead => {
                    cost += self.touch_ahead(node, pdid, proc_idx, va, true)?.1;
                    if cfg.kernel_rapf {
                        cost += cfg.pckzer_ns;
                        let channel = self.nodes[node]
                            .driver
                            .user(pdid, proc_idx)
                            .ok_or(SimError::UnboundDomain { pdid, proc_idx })?
                            .channel;
                        self.packetizer_send_rapf(node, channel, NodeCoord(entry.src_id), entry.trid, entry.seq, pdid, cost)?;
                    } else {
                        cost += cfg.netlink_send_ns;
                        self.send_netlink(node, pdid, proc_idx, &msg, cost);
                    }
                }
            }
        }
        Ok((handled, cost))
    }

    pub(crate) fn on_netlink(&mut self, node: usize, pdid: u16, proc_idx: u8, text: String) -> Result<(), SimError> {
        let now = self.now();
        let Some(user) = self.nodes[node].driver.user(pdid, proc_idx) else { return Ok(()) };
        if user.busy_until > now {
            let wait = user.busy_until.since(now);
            self.queue.schedule(wait, Event::NetlinkDeliver { node, pdid, proc_idx, msg: text });
            return Ok(());
        }
        let msg = NetlinkPageFaultMsg::decode(&text).map_err(|e| SimError::Invariant(format!("netlink: {e}")))?;
        self.user_touch(node, pdid, proc_idx, &msg)?;
        Ok(())
    }

    /// The user thread touches the faulting page and, for destination
    /// faults, sends the retransmit request through its packetizer channel.
    pub fn user_touch(&mut self, node: usize, pdid: u16, proc_idx: u8, msg: &NetlinkPageFaultMsg) -> Result<TouchResult, SimError> {
        let now = self.now();
        let (absorb, pckzer_ns) = {
            let c = &self.nodes[node].driver.cfg;
            (c.absorb_segfault, c.pckzer_ns)
        };
        let channel = self.nodes[node]
            .driver
            .user(pdid, proc_idx)
            .ok_or(SimError::UnboundDomain { pdid, proc_idx })?
            .channel;
        let (_, va) = iova_to_va(msg.iova);
        let touched = self.with_space(node, pdid, proc_idx, |s, f, c| s.touch(va, msg.rw, f, c));
        let (result, cost) = match touched {
            Ok((outcome, mut cost)) => {
                if outcome.paged_in() {
                    self.metrics.incr(Counter::HandlerInvocations);
                    self.metrics.incr(Counter::PagesTouched);
                }
                if msg.rw {
                    cost += pckzer_ns;
                    self.packetizer_send_rapf(node, channel, NodeCoord(msg.src_id), msg.trid, msg.seq, msg.pdid, cost)?;
                }
                (TouchResult::Touched { paged_in: outcome.paged_in() }, cost)
            }
            Err(SimError::Mem(MemError::SegFault(addr))) => {
                if !absorb {
                    return Err(SimError::ProcessKilled { pdid, proc_idx, va: addr });
                }
                self.metrics.incr(Counter::SegfaultsAbsorbed);
                (TouchResult::SegfaultAbsorbed, 0)
            }
            Err(e) => return Err(e),
        };
        if let Some(u) = self.nodes[node].driver.users.get_mut(&(pdid, proc_idx)) {
            u.busy_until = now.after(cost);
        }
        Ok(result)
    }
}
