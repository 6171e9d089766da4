//! Remote-write DMA engine: segmentation into 16 KB transactions, 256 B
//! packets, receive-side fault logging and the retransmission paths.

pub mod engine;
pub mod fifo;
pub mod mailbox;

use std::ops::Range;

use thiserror::Error;

pub use engine::{Engine, EngineConfig, Transaction, Transfer, TransferId, TxnState};
pub use fifo::{FaultFifo, FaultFifoEntry, FifoHalf, PushOutcome};
pub use mailbox::{MailboxMsg, MailboxOutcome, OPCODE_RAPF};

pub const MTU: u64 = 256;
pub const TXN_SIZE: u64 = 16 * 1024;
pub const MAX_CHANNELS: usize = 64;
pub const MAX_PDIDS: usize = 16;
pub const MAX_TRANSFERS: usize = MAX_CHANNELS * MAX_PDIDS;
pub const TRID_BITS: u32 = 14;
pub const SEQ_BITS: u32 = 14;
/// Error code the receiver attaches to a NACK caused by a translation fault.
pub const ERR_PAGE_FAULT: u8 = 2;
pub const ERR_UNKNOWN_PDID: u8 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("channel {channel} of pdid {pdid} is busy")]
    ChannelBusy { pdid: u16, channel: u8 },
    #[error("channel {0} is not allocated")]
    ChannelNotAllocated(u8),
    #[error("too many outstanding transfers")]
    TooManyOutstanding,
    #[error("invalid transfer: {0}")]
    Invalid(String),
    #[error("field {field} value {value:#x} does not fit")]
    FieldOverflow { field: &'static str, value: u64 },
}

/// 22-bit node coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct NodeCoord(pub u32);

impl NodeCoord {
    pub const MAX: u32 = (1 << 22) - 1;
}

/// Byte range of a transfer, relative to its start.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub offset: u64,
    pub len: u64,
}

impl Span {
    pub fn range(&self) -> Range<u64> {
        self.offset..self.offset + self.len
    }
}

/// Cuts `[0, len)` at every offset where `dst_va + offset` crosses a
/// multiple of `block`.
fn cut_at(dst_va: u64, len: u64, block: u64) -> Vec<Span> {
    let mut out = Vec::new();
    let mut off = 0;
    while off < len {
        let addr = dst_va + off;
        let to_boundary = block - addr % block;
        let n = to_boundary.min(len - off);
        out.push(Span { offset: off, len: n });
        off += n;
    }
    out
}

/// Splits a transfer into transactions that never cross a 16 KB-aligned
/// destination boundary.
pub fn segment(dst_va: u64, len: u64) -> Vec<Span> {
    cut_at(dst_va, len, TXN_SIZE)
}

/// Splits one transaction into packets. Packet boundaries follow 256 B
/// destination alignment so no packet straddles a destination page.
pub fn packetize(dst_va: u64, txn: Span) -> Vec<Span> {
    cut_at(dst_va + txn.offset, txn.len, MTU)
        .into_iter()
        .map(|s| Span { offset: txn.offset + s.offset, len: s.len })
        .collect()
}

/// Device-visible IOVA word: process index in the top 4 bits, page number
/// below. Page numbers use at most 27 bits.
pub fn encode_iova(proc_idx: u8, page: u64) -> Result<u32, EngineError> {
    if proc_idx >= 16 {
        return Err(EngineError::FieldOverflow { field: "proc_idx", value: u64::from(proc_idx) });
    }
    if page >= 1 << 27 {
        return Err(EngineError::FieldOverflow { field: "page", value: page });
    }
    Ok((u32::from(proc_idx) << 28) | page as u32)
}

pub fn decode_iova(iova: u32) -> (u8, u64) {
    ((iova >> 28) as u8, u64::from(iova & 0x0FFF_FFFF))
}

/// Link latencies. A data packet costs `per_packet_ns` plus propagation; an
/// ACK or NACK costs `ack_ns` plus propagation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WireCostModel {
    pub per_packet_ns: u64,
    pub per_hop_ns: u64,
    pub hops: u32,
    pub ack_ns: u64,
}

impl Default for WireCostModel {
    fn default() -> Self {
        WireCostModel { per_packet_ns: 2_680, per_hop_ns: 100, hops: 0, ack_ns: 500 }
    }
}

impl WireCostModel {
    pub fn propagation_ns(&self) -> u64 {
        u64::from(self.hops) * self.per_hop_ns
    }

    pub fn data_ns(&self) -> u64 {
        self.per_packet_ns + self.propagation_ns()
    }

    pub fn ack_latency_ns(&self) -> u64 {
        self.ack_ns + self.propagation_ns()
    }

    pub fn mailbox_ns(&self) -> u64 {
        self.data_ns()
    }
}

/// A data packet on the wire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub src_node: usize,
    pub src_coord: NodeCoord,
    pub trid: u16,
    pub seq: u16,
    pub pdid: u16,
    pub proc_idx: u8,
    pub index: u32,
    pub dst_va: u64,
    pub data: Vec<u8>,
}

/// Completion record returned to the initiator. `errorcode` zero is an ACK;
/// any other value is a NACK.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Response {
    pub trid: u16,
    pub seq: u16,
    pub index: u32,
    pub errorcode: u8,
}

impl Response {
    pub fn is_ack(&self) -> bool {
        self.errorcode == 0
    }
}
