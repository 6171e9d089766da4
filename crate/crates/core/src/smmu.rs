//! Behavioral IOMMU model: 16 translation context banks with their control and
//! fault registers, stream-ID decoding, a per-TBU micro-TLB with a bounded
//! number of parallel table walks, and terminate/stall fault handling.
//!
//! Fault interrupts are not delivered directly. A bank that records a fresh
//! fault with `cfie` set appends itself to an outbox that the owning node
//! drains after each translation.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::mem::{AddressSpace, FaultKind, Lookup, MemoryManager, PageRange, VirtAddr};
use crate::sim::SimTime;

pub const NUM_CONTEXT_BANKS: usize = 16;
pub const FAR_BITS: u32 = 48;
pub const FSR_TF: u32 = 1 << 1;
pub const FSR_MULTI: u32 = 1 << 31;
pub const FSYNR_WNR: u32 = 1 << 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmmuError {
    #[error("value {0} out of range")]
    ValueOutOfRange(u32),
    #[error("context bank {0} has an uncleared fault")]
    BankBusy(usize),
    #[error("context bank {0} is disabled")]
    BankDisabled(usize),
    #[error("context bank {0} is not bound to an address space")]
    BankUnbound(usize),
    #[error("context bank {0} has no active fault")]
    NoActiveFault(usize),
    #[error("no stalled transaction with token {0}")]
    UnknownToken(u64),
    #[error("TBU {0} has too many outstanding transactions")]
    TooManyOutstanding(u8),
}

/// 15-bit stream identifier: TBU number, master ID and AXI ID.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamId(u16);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamFields {
    pub tbu: u8,
    pub master_id: u8,
    pub axi_id: u8,
}

impl StreamId {
    pub fn new(v: u32) -> Result<Self, SmmuError> {
        if v >= 1 << 15 {
            return Err(SmmuError::ValueOutOfRange(v));
        }
        Ok(StreamId(v as u16))
    }

    pub fn encode(f: StreamFields) -> Result<Self, SmmuError> {
        if f.tbu >= 32 || f.master_id >= 16 || f.axi_id >= 64 {
            return Err(SmmuError::ValueOutOfRange(u32::from(f.tbu.max(f.master_id).max(f.axi_id))));
        }
        Ok(StreamId((u16::from(f.tbu) << 10) | (u16::from(f.master_id) << 6) | u16::from(f.axi_id)))
    }

    pub fn value(self) -> u16 {
        self.0
    }

    pub fn fields(self) -> StreamFields {
        StreamFields {
            tbu: ((self.0 >> 10) & 0x1F) as u8,
            master_id: ((self.0 >> 6) & 0xF) as u8,
            axi_id: (self.0 & 0x3F) as u8,
        }
    }

    pub fn tbu(self) -> u8 {
        self.fields().tbu
    }
}

pub fn decode_stream_id(v: u32) -> Result<StreamFields, SmmuError> {
    StreamId::new(v).map(StreamId::fields)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FaultConfig {
    #[default]
    Terminate,
    Stall,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SctlrFlags {
    pub cfie: bool,
    pub cfre: bool,
    pub hupcf: bool,
    pub cfcfg: FaultConfig,
    pub m: bool,
    pub afe: bool,
    pub tre: bool,
}

impl Default for SctlrFlags {
    fn default() -> Self {
        SctlrFlags {
            cfie: true,
            cfre: true,
            hupcf: false,
            cfcfg: FaultConfig::Terminate,
            m: true,
            afe: true,
            tre: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FaultRegs {
    pub tf: bool,
    pub multi: bool,
    /// Faulting input address; low 32 bits in FAR, upper 16 in FAR_HIGH.
    pub far: u64,
    pub wnr: bool,
}

impl FaultRegs {
    pub fn fsr_raw(&self) -> u32 {
        (if self.tf { FSR_TF } else { 0 }) | (if self.multi { FSR_MULTI } else { 0 })
    }

    pub fn far_low(&self) -> u32 {
        self.far as u32
    }

    pub fn far_high(&self) -> u32 {
        ((self.far >> 32) & 0xFFFF) as u32
    }

    pub fn fsynr_raw(&self) -> u32 {
        if self.wnr {
            FSYNR_WNR
        } else {
            0
        }
    }

    pub fn active(&self) -> bool {
        self.fsr_raw() != 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaultSnapshot {
    pub iova: u64,
    pub is_write: bool,
    pub multi: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Binding {
    pub pdid: u16,
    pub proc_idx: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct StalledTxn {
    stream: StreamId,
    iova: VirtAddr,
    is_write: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ContextBank {
    pub index: usize,
    pub binding: Option<Binding>,
    pub sctlr: SctlrFlags,
    pub regs: FaultRegs,
    stalled: BTreeMap<u64, StalledTxn>,
    /// Fault details recorded since the bank was initialised.
    pub fault_records: u64,
}

impl ContextBank {
    pub fn stalled_tokens(&self) -> Vec<u64> {
        self.stalled.keys().copied().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Translation {
    Translated { pa: u64, latency_ns: u64 },
    /// The access is aborted. `fault` is false for collateral terminations of
    /// healthy accesses while an earlier fault is outstanding.
    Terminated { fault: bool },
    Stalled { token: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResumeAction {
    Retry,
    Terminate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct TlbEntry {
    bank: usize,
    page: u64,
    frame_base: u64,
    writable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SmmuConfig {
    pub tlb_depth: usize,
    pub ptw_limit: usize,
    pub tbu_outstanding: u32,
    pub tlb_hit_ns: u64,
    pub walk_ns: u64,
    pub irq_latency_ns: u64,
}

impl Default for SmmuConfig {
    fn default() -> Self {
        SmmuConfig {
            tlb_depth: 32,
            ptw_limit: 8,
            tbu_outstanding: 256,
            tlb_hit_ns: 10,
            walk_ns: 250,
            irq_latency_ns: 1_000,
        }
    }
}

/// Translation buffer unit: micro-TLB plus walk and outstanding limits.
#[derive(Clone, Debug)]
pub struct TbuState {
    tlb: VecDeque<TlbEntry>,
    depth: usize,
    // Busy-until time of each walker slot.
    ptw_slots: Vec<SimTime>,
    pub outstanding: u32,
    pub outstanding_limit: u32,
    pub peak_outstanding: u32,
}

impl TbuState {
    fn new(cfg: &SmmuConfig) -> Self {
        TbuState {
            tlb: VecDeque::new(),
            depth: cfg.tlb_depth.max(1),
            ptw_slots: vec![SimTime::ZERO; cfg.ptw_limit.max(1)],
            outstanding: 0,
            outstanding_limit: cfg.tbu_outstanding,
            peak_outstanding: 0,
        }
    }

    fn lookup(&mut self, bank: usize, page: u64) -> Option<TlbEntry> {
        let pos = self.tlb.iter().position(|e| e.bank == bank && e.page == page)?;
        let e = self.tlb.remove(pos).expect("present");
        self.tlb.push_back(e);
        Some(e)
    }

    fn fill(&mut self, e: TlbEntry) {
        self.tlb.retain(|x| !(x.bank == e.bank && x.page == e.page));
        if self.tlb.len() == self.depth {
            self.tlb.pop_front();
        }
        self.tlb.push_back(e);
    }

    /// Reserves a walker and returns how long the walk waits for one.
    fn reserve_walk(&mut self, now: SimTime, walk_ns: u64) -> u64 {
        let (i, free_at) = self
            .ptw_slots
            .iter()
            .copied()
            .enumerate()
            .min_by_key(|(_, t)| *t)
            .expect("at least one walker");
        let start = free_at.max(now);
        self.ptw_slots[i] = start.after(walk_ns);
        start.since(now)
    }

    pub fn ptw_in_flight(&self, now: SimTime) -> usize {
        self.ptw_slots.iter().filter(|t| **t > now).count()
    }

    pub fn ptw_limit(&self) -> usize {
        self.ptw_slots.len()
    }

    pub fn tlb_len(&self) -> usize {
        self.tlb.len()
    }

    pub fn cached_pages(&self, bank: usize) -> Vec<u64> {
        self.tlb.iter().filter(|e| e.bank == bank).map(|e| e.page).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Smmu {
    pub cfg: SmmuConfig,
    banks: Vec<ContextBank>,
    tbus: BTreeMap<u8, TbuState>,
    next_token: u64,
    irq_outbox: Vec<usize>,
}

impl Smmu {
    pub fn new(cfg: SmmuConfig) -> Self {
        let banks = (0..NUM_CONTEXT_BANKS)
            .map(|index| ContextBank { index, ..Default::default() })
            .collect();
        Smmu { cfg, banks, tbus: BTreeMap::new(), next_token: 0, irq_outbox: Vec::new() }
    }

    fn bank_index(cb: usize) -> Result<usize, SmmuError> {
        if cb >= NUM_CONTEXT_BANKS {
            return Err(SmmuError::ValueOutOfRange(cb as u32));
        }
        Ok(cb)
    }

    pub fn bank(&self, cb: usize) -> Result<&ContextBank, SmmuError> {
        Ok(&self.banks[Self::bank_index(cb)?])
    }

    pub fn banks(&self) -> &[ContextBank] {
        &self.banks
    }

    pub fn bank_for(&self, pdid: u16, proc_idx: u8) -> Option<usize> {
        self.banks
            .iter()
            .position(|b| b.binding == Some(Binding { pdid, proc_idx }))
    }

    pub fn tbu(&mut self, tbu: u8) -> &mut TbuState {
        let cfg = self.cfg;
        self.tbus.entry(tbu).or_insert_with(|| TbuState::new(&cfg))
    }

    pub fn tbus(&self) -> impl Iterator<Item = (&u8, &TbuState)> {
        self.tbus.iter()
    }

    pub fn init_context_bank(
        &mut self,
        cb: usize,
        pdid: u16,
        proc_idx: u8,
        flags: SctlrFlags,
    ) -> Result<(), SmmuError> {
        let cb = Self::bank_index(cb)?;
        let bank = &mut self.banks[cb];
        if bank.regs.active() {
            return Err(SmmuError::BankBusy(cb));
        }
        bank.binding = Some(Binding { pdid, proc_idx });
        bank.sctlr = flags;
        bank.regs = FaultRegs::default();
        bank.stalled.clear();
        bank.fault_records = 0;
        for tbu in self.tbus.values_mut() {
            tbu.tlb.retain(|e| e.bank != cb);
        }
        Ok(())
    }

    /// Interrupts raised since the last drain, one entry per fresh fault.
    pub fn drain_irqs(&mut self) -> Vec<usize> {
        std::mem::take(&mut self.irq_outbox)
    }

    fn record_fault(&mut self, cb: usize, iova: VirtAddr, is_write: bool) {
        let bank = &mut self.banks[cb];
        if bank.regs.active() {
            bank.regs.multi = true;
        } else {
            bank.regs = FaultRegs {
                tf: true,
                multi: false,
                far: iova.0 & ((1u64 << FAR_BITS) - 1),
                wnr: is_write,
            };
            bank.fault_records += 1;
            if bank.sctlr.cfie {
                self.irq_outbox.push(cb);
            }
        }
    }

    fn park(&mut self, cb: usize, txn: StalledTxn) -> Translation {
        let token = self.next_token;
        self.next_token += 1;
        self.banks[cb].stalled.insert(token, txn);
        Translation::Stalled { token }
    }

    fn space<'m>(&self, cb: usize, mem: &'m MemoryManager) -> Result<&'m AddressSpace, SmmuError> {
        let b = self.banks[cb].binding.ok_or(SmmuError::BankUnbound(cb))?;
        mem.space(b.pdid, b.proc_idx).ok_or(SmmuError::BankUnbound(cb))
    }

    pub fn translate(
        &mut self,
        stream: StreamId,
        cb: usize,
        iova: VirtAddr,
        is_write: bool,
        now: SimTime,
        mem: &MemoryManager,
    ) -> Result<Translation, SmmuError> {
        let cb = Self::bank_index(cb)?;
        if !self.banks[cb].sctlr.m {
            return Err(SmmuError::BankDisabled(cb));
        }
        let space = self.space(cb, mem)?;
        let sctlr = self.banks[cb].sctlr;
        let txn = StalledTxn { stream, iova, is_write };

        if self.banks[cb].regs.active() && !sctlr.hupcf {
            // Nothing is processed independently of the outstanding fault.
            // Accesses that would have faulted still mark MULTI.
            let would_fault = matches!(space.lookup(iova, is_write), Lookup::Fault { .. });
            if would_fault {
                self.banks[cb].regs.multi = true;
            }
            return Ok(match sctlr.cfcfg {
                FaultConfig::Terminate => Translation::Terminated { fault: would_fault },
                FaultConfig::Stall => self.park(cb, txn),
            });
        }

        let cfg = self.cfg;
        let page = iova.page_num();
        let tbu = self.tbu(stream.tbu());
        if let Some(e) = tbu.lookup(cb, page) {
            if e.writable || !is_write {
                return Ok(Translation::Translated {
                    pa: e.frame_base | iova.page_offset(),
                    latency_ns: cfg.tlb_hit_ns,
                });
            }
        }
        let wait = tbu.reserve_walk(now, cfg.walk_ns);
        match space.lookup(iova, is_write) {
            Lookup::Present { pa, writable } => {
                tbu.fill(TlbEntry { bank: cb, page, frame_base: pa & !0xFFF, writable });
                Ok(Translation::Translated { pa, latency_ns: wait + cfg.walk_ns })
            }
            Lookup::Fault { kind } => {
                debug_assert!(matches!(
                    kind,
                    FaultKind::NotPresent | FaultKind::Unmapped | FaultKind::WriteToReadOnly
                ));
                self.record_fault(cb, iova, is_write);
                Ok(match sctlr.cfcfg {
                    FaultConfig::Terminate => Translation::Terminated { fault: true },
                    FaultConfig::Stall => self.park(cb, txn),
                })
            }
        }
    }

    pub fn read_and_clear_fault(&mut self, cb: usize) -> Result<FaultSnapshot, SmmuError> {
        let cb = Self::bank_index(cb)?;
        let regs = self.banks[cb].regs;
        if !regs.active() {
            return Err(SmmuError::NoActiveFault(cb));
        }
        let iova = u64::from(regs.far_low()) | (u64::from(regs.far_high()) << 32);
        self.banks[cb].regs = FaultRegs::default();
        Ok(FaultSnapshot { iova, is_write: regs.fsynr_raw() & FSYNR_WNR != 0, multi: regs.multi })
    }

    pub fn resume(
        &mut self,
        cb: usize,
        token: u64,
        action: ResumeAction,
        now: SimTime,
        mem: &MemoryManager,
    ) -> Result<Translation, SmmuError> {
        let cb = Self::bank_index(cb)?;
        let txn = self.banks[cb]
            .stalled
            .remove(&token)
            .ok_or(SmmuError::UnknownToken(token))?;
        match action {
            ResumeAction::Terminate => Ok(Translation::Terminated { fault: true }),
            ResumeAction::Retry => self.translate(txn.stream, cb, txn.iova, txn.is_write, now, mem),
        }
    }

    pub fn tlb_invalidate(&mut self, cb: usize, pages: PageRange) {
        for tbu in self.tbus.values_mut() {
            tbu.tlb.retain(|e| !(e.bank == cb && pages.contains(&e.page)));
        }
    }

    /// Drops cached translations for a range in every bank bound to the
    /// given address space.
    pub fn invalidate_space(&mut self, pdid: u16, proc_idx: u8, pages: PageRange) {
        let banks: Vec<usize> = self
            .banks
            .iter()
            .filter(|b| b.binding == Some(Binding { pdid, proc_idx }))
            .map(|b| b.index)
            .collect();
        for cb in banks {
            self.tlb_invalidate(cb, pages.clone());
        }
    }

    pub fn begin_access(&mut self, tbu: u8) -> Result<(), SmmuError> {
        let t = self.tbu(tbu);
        if t.outstanding >= t.outstanding_limit {
            return Err(SmmuError::TooManyOutstanding(tbu));
        }
        t.outstanding += 1;
        t.peak_outstanding = t.peak_outstanding.max(t.outstanding);
        Ok(())
    }

    pub fn end_access(&mut self, tbu: u8) {
        let t = self.tbu(tbu);
        t.outstanding = t.outstanding.saturating_sub(1);
    }

    /// No cached translation may name a page that is not currently resident
    /// with matching permissions.
    pub fn check_tlb_coherence(&self, mem: &MemoryManager) -> Result<(), String> {
        for (id, tbu) in &self.tbus {
            for e in &tbu.tlb {
                let Some(b) = self.banks[e.bank].binding else {
                    return Err(format!("TBU {id} caches page for unbound bank {}", e.bank));
                };
                let Some(space) = mem.space(b.pdid, b.proc_idx) else { continue };
                match space.lookup(VirtAddr::from_page(e.page), e.writable) {
                    Lookup::Present { pa, .. } if pa & !0xFFF == e.frame_base => {}
                    other => {
                        return Err(format!(
                            "stale TLB entry bank {} page {:#x}: now {other:?}",
                            e.bank, e.page
                        ))
                    }
                }
            }
        }
        Ok(())
    }
}
