//! Scheduler and DMA state per node, and the event handlers that drive it.

use std::collections::{BTreeMap, VecDeque};

use super::{
    decode_iova, encode_iova, packetize, segment, EngineError, FaultFifo, FaultFifoEntry, MailboxMsg, MailboxOutcome,
    NodeCoord, Packet, PushOutcome, Response, Span, ERR_PAGE_FAULT, ERR_UNKNOWN_PDID, MAX_CHANNELS, MAX_TRANSFERS,
    OPCODE_RAPF,
};
use crate::mem::{VirtAddr, PAGE_SHIFT};
use crate::sim::{Counter, EventHandle};
use crate::smmu::{ResumeAction, StreamFields, StreamId, Translation};
use crate::system::{Event, SimError, Simulation, TransferRequest};

const TX_TBU: u8 = 1;
const RX_TBU: u8 = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EngineConfig {
    pub timeout_ns: u64,
    pub outstanding_per_transfer: usize,
    pub fifo_depth: usize,
    /// Scheduler time to start an attempt after it is decided.
    pub r5_dispatch_ns: u64,
    /// Delay between a mailbox write and the scheduler acting on it.
    pub r5_poll_ns: u64,
    /// Spacing between consecutive packets leaving one node.
    pub packet_gap_ns: u64,
    /// Delay until a polling process sees the completion status.
    pub completion_ns: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            timeout_ns: 1_000_000,
            outstanding_per_transfer: 2,
            fifo_depth: super::fifo::DEFAULT_FIFO_DEPTH,
            r5_dispatch_ns: 500,
            r5_poll_ns: 500,
            packet_gap_ns: 100,
            completion_ns: 300,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TransferId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxnState {
    Pending,
    InFlight,
    PausedOnPF,
    Acked,
}

#[derive(Clone, Debug)]
pub struct Transaction {
    pub trid: u16,
    pub seq: u16,
    pub attempts: u32,
    pub span: Span,
    pub packets: Vec<Span>,
    pub state: TxnState,
    pub timeout: Option<EventHandle>,
    acked: u64,
}

impl Transaction {
    fn all_acked(&self) -> bool {
        let full = if self.packets.len() == 64 { u64::MAX } else { (1u64 << self.packets.len()) - 1 };
        self.acked == full
    }
}

#[derive(Clone, Debug)]
pub struct Transfer {
    pub id: TransferId,
    pub pdid: u16,
    pub proc_idx: u8,
    pub channel: u8,
    pub src_va: u64,
    pub dst_va: u64,
    pub len: u64,
    pub dst_node: usize,
    pub txns: Vec<Transaction>,
    pub completed: bool,
}

impl Transfer {
    pub fn in_flight(&self) -> usize {
        self.txns
            .iter()
            .filter(|t| matches!(t.state, TxnState::InFlight | TxnState::PausedOnPF))
            .count()
    }

    fn next_pending(&self) -> Option<usize> {
        self.txns.iter().position(|t| t.state == TxnState::Pending)
    }
}

#[derive(Clone, Debug)]
struct TxQueue {
    xfer: TransferId,
    txn: usize,
    seq: u16,
    packets: VecDeque<Packet>,
}

/// What a response did to its transaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResponseEffect {
    Stale,
    Progress,
    Paused,
    TxnAcked { xfer: TransferId, txn: usize },
}

#[derive(Clone, Debug)]
pub struct Engine {
    pub cfg: EngineConfig,
    busy_channels: BTreeMap<(u16, u8), TransferId>,
    packetizer: BTreeMap<u8, u16>,
    transfers: BTreeMap<TransferId, Transfer>,
    trids: BTreeMap<u16, (TransferId, usize)>,
    next_xfer: u32,
    next_trid: u16,
    pub fifo: FaultFifo,
    link: VecDeque<TxQueue>,
    pump_scheduled: bool,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Self {
        Engine {
            fifo: FaultFifo::new(cfg.fifo_depth),
            cfg,
            busy_channels: BTreeMap::new(),
            packetizer: BTreeMap::new(),
            transfers: BTreeMap::new(),
            trids: BTreeMap::new(),
            next_xfer: 0,
            next_trid: 0,
            link: VecDeque::new(),
            pump_scheduled: false,
        }
    }

    /// Reserves a packetizer channel for user-level mailbox messages.
    pub fn allocate_packetizer(&mut self, pdid: u16) -> Result<u8, EngineError> {
        let ch = (0..MAX_CHANNELS as u8)
            .rev()
            .find(|c| !self.packetizer.contains_key(c))
            .ok_or(EngineError::TooManyOutstanding)?;
        self.packetizer.insert(ch, pdid);
        Ok(ch)
    }

    pub fn packetizer_pdid(&self, channel: u8) -> Option<u16> {
        self.packetizer.get(&channel).copied()
    }

    pub fn transfer(&self, id: TransferId) -> Option<&Transfer> {
        self.transfers.get(&id)
    }

    pub fn active_transfers(&self) -> usize {
        self.transfers.values().filter(|t| !t.completed).count()
    }

    pub fn outstanding_violation(&self) -> Option<String> {
        self.transfers
            .values()
            .find(|t| t.in_flight() > self.cfg.outstanding_per_transfer)
            .map(|t| format!("transfer {} has {} transactions in flight", t.id.0, t.in_flight()))
    }

    fn alloc_trid(&mut self) -> Result<u16, EngineError> {
        for _ in 0..1 << 14 {
            let t = self.next_trid;
            self.next_trid = (self.next_trid + 1) & 0x3FFF;
            if !self.trids.contains_key(&t) {
                return Ok(t);
            }
        }
        Err(EngineError::TooManyOutstanding)
    }

    /// Registers a transfer and its transactions without launching any.
    pub fn create_transfer(&mut self, req: &TransferRequest) -> Result<TransferId, EngineError> {
        if req.len == 0 {
            return Err(EngineError::Invalid("zero-length transfer".into()));
        }
        if usize::from(req.channel) >= MAX_CHANNELS || req.pdid >= 16 {
            return Err(EngineError::Invalid(format!("channel {} pdid {}", req.channel, req.pdid)));
        }
        if self.busy_channels.contains_key(&(req.pdid, req.channel)) {
            return Err(EngineError::ChannelBusy { pdid: req.pdid, channel: req.channel });
        }
        if self.active_transfers() >= MAX_TRANSFERS {
            return Err(EngineError::TooManyOutstanding);
        }
        let id = TransferId(self.next_xfer);
        self.next_xfer += 1;
        let mut txns = Vec::new();
        for (i, span) in segment(req.dst_va, req.len).into_iter().enumerate() {
            let trid = self.alloc_trid()?;
            self.trids.insert(trid, (id, i));
            txns.push(Transaction {
                trid,
                seq: 0,
                attempts: 0,
                span,
                packets: packetize(req.dst_va, span),
                state: TxnState::Pending,
                timeout: None,
                acked: 0,
            });
        }
        self.busy_channels.insert((req.pdid, req.channel), id);
        self.transfers.insert(
            id,
            Transfer {
                id,
                pdid: req.pdid,
                proc_idx: req.proc_idx,
                channel: req.channel,
                src_va: req.src_va,
                dst_va: req.dst_va,
                len: req.len,
                dst_node: req.dst_node,
                txns,
                completed: false,
            },
        );
        Ok(id)
    }

    /// Starts a new attempt: the first uses sequence 0, each retry the next.
    pub fn begin_attempt(&mut self, id: TransferId, txn: usize) -> u16 {
        let t = &mut self.transfers.get_mut(&id).expect("transfer").txns[txn];
        if t.attempts > 0 {
            t.seq = (t.seq + 1) & 0x3FFF;
        }
        t.attempts += 1;
        t.state = TxnState::InFlight;
        t.acked = 0;
        let seq = t.seq;
        self.link.retain(|q| !(q.xfer == id && q.txn == txn));
        seq
    }

    pub fn txn(&self, id: TransferId, txn: usize) -> Option<&Transaction> {
        self.transfers.get(&id).and_then(|t| t.txns.get(txn))
    }

    fn txn_mut(&mut self, id: TransferId, txn: usize) -> Option<&mut Transaction> {
        self.transfers.get_mut(&id).and_then(|t| t.txns.get_mut(txn))
    }

    pub fn lookup_trid(&self, trid: u16) -> Option<(TransferId, usize)> {
        self.trids.get(&trid).copied()
    }

    pub fn apply_response(&mut self, resp: &Response) -> ResponseEffect {
        let Some((id, i)) = self.lookup_trid(resp.trid) else {
            return ResponseEffect::Stale;
        };
        let t = self.txn_mut(id, i).expect("trid maps to a live transaction");
        if t.seq != resp.seq || matches!(t.state, TxnState::Acked | TxnState::Pending) {
            return ResponseEffect::Stale;
        }
        if !resp.is_ack() {
            t.state = TxnState::PausedOnPF;
            return ResponseEffect::Paused;
        }
        t.acked |= 1u64 << resp.index;
        if t.all_acked() {
            t.state = TxnState::Acked;
            ResponseEffect::TxnAcked { xfer: id, txn: i }
        } else {
            ResponseEffect::Progress
        }
    }

    /// Marks the transfer complete once every transaction is acknowledged,
    /// releasing its channel and transaction ids.
    fn finish_if_done(&mut self, id: TransferId) -> bool {
        let x = self.transfers.get_mut(&id).expect("transfer");
        if x.completed || x.txns.iter().any(|t| t.state != TxnState::Acked) {
            return false;
        }
        x.completed = true;
        self.busy_channels.remove(&(x.pdid, x.channel));
        for t in &x.txns {
            self.trids.remove(&t.trid);
        }
        true
    }

    /// Validates a mailbox message against the pending transaction.
    pub fn check_rapf(&self, msg: &MailboxMsg) -> Result<(TransferId, usize), MailboxOutcome> {
        if msg.wired_opcode != OPCODE_RAPF {
            return Err(MailboxOutcome::NotRapf);
        }
        if msg.wired_pdid != msg.rcved_pdid {
            return Err(MailboxOutcome::PdidMismatch);
        }
        let (id, i) = self.lookup_trid(msg.trid).ok_or(MailboxOutcome::UnknownTrid)?;
        let x = &self.transfers[&id];
        if x.pdid != msg.wired_pdid {
            return Err(MailboxOutcome::PdidMismatch);
        }
        let t = &x.txns[i];
        if matches!(t.state, TxnState::Acked | TxnState::Pending) || !msg.seq_matches(t.seq) {
            return Err(MailboxOutcome::StaleSeqIgnored);
        }
        Ok((id, i))
    }

    /// Drops bookkeeping of completed transfers.
    pub fn reap_completed(&mut self) {
        self.transfers.retain(|_, t| !t.completed);
    }
}

impl Simulation {
    pub fn submit_transfer(&mut self, node: usize, req: TransferRequest) -> Result<TransferId, SimError> {
        if req.dst_node >= self.nodes.len() {
            return Err(EngineError::Invalid(format!("no node {}", req.dst_node)).into());
        }
        let id = self.nodes[node].engine.create_transfer(&req)?;
        self.launch_pending(node, id);
        Ok(id)
    }

    fn launch_pending(&mut self, node: usize, id: TransferId) {
        loop {
            let eng = &self.nodes[node].engine;
            let x = eng.transfer(id).expect("transfer");
            if x.in_flight() >= eng.cfg.outstanding_per_transfer {
                return;
            }
            let Some(i) = x.next_pending() else { return };
            self.launch_attempt(node, id, i);
        }
    }

    /// (Re)starts a transaction: new sequence number, fresh timeout, source
    /// translation after the scheduler's dispatch delay.
    pub(crate) fn launch_attempt(&mut self, node: usize, id: TransferId, txn: usize) {
        let (timeout_ns, dispatch_ns) = {
            let c = &self.nodes[node].engine.cfg;
            (c.timeout_ns, c.r5_dispatch_ns)
        };
        if let Some(h) = self.nodes[node].engine.txn(id, txn).and_then(|t| t.timeout) {
            self.queue.cancel(h);
        }
        let seq = self.nodes[node].engine.begin_attempt(id, txn);
        let h = self.queue.schedule(timeout_ns, Event::Timeout { node, xfer: id, txn, seq });
        self.nodes[node].engine.txn_mut(id, txn).expect("txn").timeout = Some(h);
        self.queue.schedule(dispatch_ns, Event::SourceBurst { node, xfer: id, txn, seq });
    }

    fn stream(channel: u8, tbu: u8) -> StreamId {
        StreamId::encode(StreamFields { tbu, master_id: 0, axi_id: channel & 0x3F }).expect("fields in range")
    }

    /// Translates every source page of the attempt in one burst and queues
    /// the packets whose source pages translated.
    pub(crate) fn on_source_burst(&mut self, node: usize, id: TransferId, txn: usize, seq: u16) -> Result<(), SimError> {
        let now = self.now();
        let stall = self.stall_mode();
        let n = &mut self.nodes[node];
        let Some(x) = n.engine.transfer(id) else { return Ok(()) };
        let t = &x.txns[txn];
        if t.seq != seq || t.state != TxnState::InFlight {
            return Ok(());
        }
        let x = x.clone();
        let t = &x.txns[txn];
        let cb = n
            .smmu
            .bank_for(x.pdid, x.proc_idx)
            .ok_or(SimError::UnboundDomain { pdid: x.pdid, proc_idx: x.proc_idx })?;
        let stream = Self::stream(x.channel, TX_TBU);
        let first = (x.src_va + t.span.offset) >> PAGE_SHIFT;
        let last = (x.src_va + t.span.offset + t.span.len - 1) >> PAGE_SHIFT;
        let mut bad = Vec::new();
        let mut ready_ns = 0u64;
        for page in first..=last {
            n.smmu.begin_access(TX_TBU)?;
            let mut out = n.smmu.translate(stream, cb, VirtAddr::from_page(page), false, now, &n.mem)?;
            if let (true, Translation::Stalled { token }) = (stall, out) {
                out = n.smmu.resume(cb, token, ResumeAction::Terminate, now, &n.mem)?;
            }
            n.smmu.end_access(TX_TBU);
            match out {
                Translation::Translated { latency_ns, .. } => ready_ns = ready_ns.max(latency_ns),
                _ => bad.push(page),
            }
        }
        let space = n
            .mem
            .space(x.pdid, x.proc_idx)
            .ok_or(SimError::UnboundDomain { pdid: x.pdid, proc_idx: x.proc_idx })?;
        let mut packets = VecDeque::new();
        let mut withheld = 0;
        for (index, p) in t.packets.iter().enumerate() {
            let lo = (x.src_va + p.offset) >> PAGE_SHIFT;
            let hi = (x.src_va + p.offset + p.len - 1) >> PAGE_SHIFT;
            if bad.iter().any(|b| (lo..=hi).contains(b)) {
                withheld += 1;
                continue;
            }
            let mut data = vec![0u8; p.len as usize];
            space.read_bytes(VirtAddr(x.src_va + p.offset), &mut data)?;
            packets.push_back(Packet {
                src_node: node,
                src_coord: n.coord,
                trid: t.trid,
                seq,
                pdid: x.pdid,
                proc_idx: x.proc_idx,
                index: index as u32,
                dst_va: x.dst_va + p.offset,
                data,
            });
        }
        self.metrics.add(Counter::PacketsWithheld, withheld);
        self.raise_irqs(node);
        let n = &mut self.nodes[node];
        if !packets.is_empty() {
            n.engine.link.push_back(TxQueue { xfer: id, txn, seq, packets });
            if !n.engine.pump_scheduled {
                n.engine.pump_scheduled = true;
                self.queue.schedule(ready_ns, Event::LinkPump { node });
            }
        }
        Ok(())
    }

    pub(crate) fn raise_irqs(&mut self, node: usize) {
        let lat = self.nodes[node].smmu.cfg.irq_latency_ns;
        for cb in self.nodes[node].smmu.drain_irqs() {
            self.queue.schedule(lat, Event::Irq { node, cb });
        }
    }

    /// Sends one packet, alternating between the queued attempts.
    pub(crate) fn on_link_pump(&mut self, node: usize) {
        let data_ns = self.cfg.wire.data_ns();
        let eng = &mut self.nodes[node].engine;
        while let Some(mut q) = eng.link.pop_front() {
            let live = eng.txn(q.xfer, q.txn).map(|t| t.seq == q.seq && t.state != TxnState::Acked).unwrap_or(false);
            if !live {
                continue;
            }
            let pkt = q.packets.pop_front().expect("queues are never empty");
            let dst = eng.transfers[&q.xfer].dst_node;
            if !q.packets.is_empty() {
                eng.link.push_back(q);
            }
            self.queue.schedule(data_ns, Event::PacketArrive { node: dst, pkt });
            self.metrics.incr(Counter::PacketsSent);
            break;
        }
        let eng = &mut self.nodes[node].engine;
        if eng.link.is_empty() {
            eng.pump_scheduled = false;
        } else {
            let gap = eng.cfg.packet_gap_ns;
            self.queue.schedule(gap, Event::LinkPump { node });
        }
    }

    /// Destination side: translate, write on success, otherwise NACK and log.
    pub(crate) fn rx_packet(&mut self, node: usize, pkt: Packet) -> Result<(), SimError> {
        let now = self.now();
        let stall = self.stall_mode();
        let ack_ns = self.cfg.wire.ack_latency_ns();
        let n = &mut self.nodes[node];
        let respond = |errorcode| Response { trid: pkt.trid, seq: pkt.seq, index: pkt.index, errorcode };
        let Some(cb) = n.smmu.bank_for(pkt.pdid, pkt.proc_idx) else {
            self.metrics.incr(Counter::UnknownPdidNacks);
            self.queue.schedule(ack_ns, Event::ResponseArrive { node: pkt.src_node, resp: respond(ERR_UNKNOWN_PDID) });
            return Ok(());
        };
        let va = VirtAddr(pkt.dst_va);
        let stream = Self::stream(0, RX_TBU);
        n.smmu.begin_access(RX_TBU)?;
        let mut out = n.smmu.translate(stream, cb, va, true, now, &n.mem)?;
        if let (true, Translation::Stalled { token }) = (stall, out) {
            out = n.smmu.resume(cb, token, ResumeAction::Terminate, now, &n.mem)?;
        }
        n.smmu.end_access(RX_TBU);
        match out {
            Translation::Translated { latency_ns, .. } => {
                n.mem
                    .space_mut(pkt.pdid, pkt.proc_idx)
                    .expect("bound bank implies space")
                    .write_bytes(va, &pkt.data)?;
                self.queue.schedule(latency_ns + ack_ns, Event::ResponseArrive { node: pkt.src_node, resp: respond(0) });
            }
            _ => {
                let entry = FaultFifoEntry {
                    src_id: pkt.src_coord.0,
                    trid: pkt.trid,
                    seq: pkt.seq,
                    pdid: pkt.pdid,
                    iova: encode_iova(pkt.proc_idx, va.page_num())?,
                    exa_ack: 0,
                };
                let c = match n.engine.fifo.push(entry)? {
                    PushOutcome::Pushed => Counter::FifoPushes,
                    PushOutcome::DupSkipped => Counter::FifoDups,
                    PushOutcome::DroppedFull => Counter::FifoDrops,
                };
                self.metrics.incr(c);
                self.queue
                    .schedule(ack_ns, Event::ResponseArrive { node: pkt.src_node, resp: respond(ERR_PAGE_FAULT) });
                self.raise_irqs(node);
            }
        }
        Ok(())
    }

    pub(crate) fn on_response(&mut self, node: usize, resp: Response) -> Result<(), SimError> {
        if !resp.is_ack() {
            self.metrics.incr(Counter::NackCount);
        }
        match self.nodes[node].engine.apply_response(&resp) {
            ResponseEffect::Stale => {
                if !resp.is_ack() {
                    self.metrics.incr(Counter::StaleNacks);
                }
            }
            ResponseEffect::Progress | ResponseEffect::Paused => {}
            ResponseEffect::TxnAcked { xfer, txn } => {
                if let Some(h) = self.nodes[node].engine.txn_mut(xfer, txn).and_then(|t| t.timeout.take()) {
                    self.queue.cancel(h);
                }
                if self.nodes[node].engine.finish_if_done(xfer) {
                    let delay = self.nodes[node].engine.cfg.completion_ns;
                    self.queue.schedule(delay, Event::TransferDone { node, xfer });
                } else {
                    self.launch_pending(node, xfer);
                }
            }
        }
        Ok(())
    }

    pub(crate) fn on_timeout(&mut self, node: usize, id: TransferId, txn: usize, seq: u16) -> Result<(), SimError> {
        let Some(t) = self.nodes[node].engine.txn(id, txn) else { return Ok(()) };
        if t.seq != seq || matches!(t.state, TxnState::Acked | TxnState::Pending) {
            return Ok(());
        }
        self.nodes[node].engine.txn_mut(id, txn).expect("txn").timeout = None;
        self.metrics.incr(Counter::TimeoutsFired);
        self.metrics.incr(Counter::Retransmissions);
        self.launch_attempt(node, id, txn);
        Ok(())
    }

    /// Scheduler reaction to a mailbox message.
    pub fn mailbox_dispatch(&mut self, node: usize, raw: u64) -> Result<MailboxOutcome, SimError> {
        let msg = MailboxMsg::decode(raw);
        match self.nodes[node].engine.check_rapf(&msg) {
            Ok((id, txn)) => {
                self.metrics.incr(Counter::RapfRetransmits);
                self.metrics.incr(Counter::Retransmissions);
                self.launch_attempt(node, id, txn);
                Ok(MailboxOutcome::Retransmitted)
            }
            Err(o) => {
                let c = match o {
                    MailboxOutcome::PdidMismatch => Some(Counter::RapfPdidMismatch),
                    MailboxOutcome::UnknownTrid => Some(Counter::RapfUnknownTrid),
                    MailboxOutcome::StaleSeqIgnored => Some(Counter::RapfStale),
                    _ => None,
                };
                if let Some(c) = c {
                    self.metrics.incr(c);
                }
                Ok(o)
            }
        }
    }

    /// User-level mailbox send. The packetizer stamps the opcode and the pdid
    /// bound to the channel; `pdid` is only what the caller claims.
    #[allow(clippy::too_many_arguments)]
    pub fn packetizer_send_rapf(
        &mut self,
        node: usize,
        channel: u8,
        dst_coord: NodeCoord,
        trid: u16,
        seq: u16,
        pdid: u16,
        extra_delay_ns: u64,
    ) -> Result<(), SimError> {
        let wired = self.nodes[node]
            .engine
            .packetizer_pdid(channel)
            .ok_or(EngineError::ChannelNotAllocated(channel))?;
        let dst = self
            .node_index(dst_coord.0)
            .ok_or_else(|| EngineError::Invalid(format!("no node with coordinate {}", dst_coord.0)))?;
        let msg = MailboxMsg { wired_opcode: OPCODE_RAPF, wired_pdid: wired, trid, seq, rcved_pdid: pdid };
        let delay = extra_delay_ns + self.cfg.wire.mailbox_ns() + self.nodes[dst].engine.cfg.r5_poll_ns;
        self.queue.schedule(delay, Event::MailboxArrive { node: dst, raw: msg.encode()? });
        self.metrics.incr(Counter::RapfSent);
        Ok(())
    }
}

/// Splits a FIFO IOVA word back into an address.
pub fn iova_to_va(iova: u32) -> (u8, VirtAddr) {
    let (proc_idx, page) = decode_iova(iova);
    (proc_idx, VirtAddr::from_page(page))
}
