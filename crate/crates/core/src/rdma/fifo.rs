//! Receiver-side fault log: 128-bit entries read as two 64-bit halves.

use std::collections::VecDeque;

use thiserror::Error;

use super::EngineError;

pub const DEFAULT_FIFO_DEPTH: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct FaultFifoEntry {
    pub src_id: u32,
    pub trid: u16,
    pub seq: u16,
    pub pdid: u16,
    pub iova: u32,
    pub exa_ack: u8,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FifoError {
    #[error("fault FIFO is empty")]
    EmptyFifo,
    #[error("second half read without a preceding first half")]
    ProtocolViolation,
    #[error("entry word {0} has its valid bit clear")]
    InvalidEntry(usize),
}

fn check(field: &'static str, value: u64, bits: u32) -> Result<(), EngineError> {
    if value >> bits != 0 {
        return Err(EngineError::FieldOverflow { field, value });
    }
    Ok(())
}

impl FaultFifoEntry {
    pub fn validate(&self) -> Result<(), EngineError> {
        check("src_id", u64::from(self.src_id), 22)?;
        check("trid", u64::from(self.trid), 14)?;
        check("seq", u64::from(self.seq), 14)?;
        check("exa_ack", u64::from(self.exa_ack), 2)
    }

    pub fn encode(&self) -> Result<[u32; 4], EngineError> {
        self.validate()?;
        let trid = u32::from(self.trid);
        let w0 = (self.src_id << 8) | ((trid >> 12) << 4) | 1;
        let w1 = ((trid & 0xFFF) << 20) | (u32::from(self.seq) << 4) | 1;
        let w2 = (u32::from(self.pdid) << 16) | ((self.iova >> 20) << 4) | (u32::from(self.exa_ack) << 1) | 1;
        let w3 = ((self.iova & 0xF_FFFF) << 12) | 1;
        Ok([w0, w1, w2, w3])
    }

    pub fn decode(w: [u32; 4]) -> Result<Self, FifoError> {
        if let Some(i) = w.iter().position(|x| x & 1 == 0) {
            return Err(FifoError::InvalidEntry(i));
        }
        let trid_hi = (w[0] >> 4) & 0x3;
        let trid_lo = w[1] >> 20;
        Ok(FaultFifoEntry {
            src_id: (w[0] >> 8) & 0x3F_FFFF,
            trid: ((trid_hi << 12) | trid_lo) as u16,
            seq: ((w[1] >> 4) & 0x3FFF) as u16,
            pdid: (w[2] >> 16) as u16,
            iova: (((w[2] >> 4) & 0xFFF) << 20) | (w[3] >> 12),
            exa_ack: ((w[2] >> 1) & 0x3) as u8,
        })
    }

    pub fn from_halves(first: u64, second: u64) -> Result<Self, FifoError> {
        Self::decode([(first >> 32) as u32, first as u32, (second >> 32) as u32, second as u32])
    }

    /// Key used to suppress back-to-back duplicates.
    pub fn dedup_key(&self) -> (u32, u16, u16, u32) {
        (self.src_id, self.trid, self.seq, self.iova)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PushOutcome {
    Pushed,
    DupSkipped,
    DroppedFull,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FifoHalf {
    First,
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ReadState {
    #[default]
    Idle,
    FirstHalfRead,
}

#[derive(Clone, Debug)]
pub struct FaultFifo {
    entries: VecDeque<[u32; 4]>,
    depth: usize,
    last_pushed: Option<(u32, u16, u16, u32)>,
    state: ReadState,
    pub drops: u64,
}

impl Default for FaultFifo {
    fn default() -> Self {
        FaultFifo::new(DEFAULT_FIFO_DEPTH)
    }
}

impl FaultFifo {
    pub fn new(depth: usize) -> Self {
        FaultFifo { entries: VecDeque::new(), depth, last_pushed: None, state: ReadState::Idle, drops: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn state(&self) -> ReadState {
        self.state
    }

    pub fn push(&mut self, entry: FaultFifoEntry) -> Result<PushOutcome, EngineError> {
        let words = entry.encode()?;
        let key = entry.dedup_key();
        if self.last_pushed == Some(key) {
            return Ok(PushOutcome::DupSkipped);
        }
        if self.entries.len() >= self.depth {
            self.drops += 1;
            return Ok(PushOutcome::DroppedFull);
        }
        self.entries.push_back(words);
        self.last_pushed = Some(key);
        Ok(PushOutcome::Pushed)
    }

    pub fn read64(&mut self, half: FifoHalf) -> Result<u64, FifoError> {
        let head = *self.entries.front().ok_or(FifoError::EmptyFifo)?;
        match (half, self.state) {
            (FifoHalf::First, _) => {
                self.state = ReadState::FirstHalfRead;
                Ok((u64::from(head[0]) << 32) | u64::from(head[1]))
            }
            (FifoHalf::Second, ReadState::FirstHalfRead) => {
                self.entries.pop_front();
                self.state = ReadState::Idle;
                Ok((u64::from(head[2]) << 32) | u64::from(head[3]))
            }
            (FifoHalf::Second, ReadState::Idle) => Err(FifoError::ProtocolViolation),
        }
    }

    /// Reads one whole entry with the two-phase protocol.
    pub fn pop_entry(&mut self) -> Result<FaultFifoEntry, FifoError> {
        let first = self.read64(FifoHalf::First)?;
        let second = self.read64(FifoHalf::Second)?;
        FaultFifoEntry::from_halves(first, second)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(page: u32) -> FaultFifoEntry {
        FaultFifoEntry { src_id: 7, trid: 5, seq: 2, pdid: 3, iova: page, exa_ack: 0 }
    }

    #[test]
    fn word_layout() {
        let e = FaultFifoEntry { src_id: 0x3F_FFFF, trid: 0x3ABC, seq: 0x1234, pdid: 0xBEEF, iova: 0x89AB_CDEF, exa_ack: 2 };
        let w = e.encode().unwrap();
        assert_eq!(w[0], (0x3F_FFFF << 8) | (0x3 << 4) | 1);
        assert_eq!(w[1], (0xABC << 20) | (0x1234 << 4) | 1);
        assert_eq!(w[2], (0xBEEF << 16) | (0x89A << 4) | (2 << 1) | 1);
        assert_eq!(w[3], (0xB_CDEF << 12) | 1);
        assert_eq!(FaultFifoEntry::decode(w).unwrap(), e);
    }

    #[test]
    fn boundary_round_trip() {
        let src = [0u32, 0x3F_FFFF, 0x15_5555, 0x2A_AAAA];
        let trid = [0u16, 0x3FFF, 0x1555, 0x2AAA];
        let seq = trid;
        let pdid = [0u16, 0xFFFF, 0x5555, 0xAAAA];
        let iova = [0u32, u32::MAX, 0x5555_5555, 0xAAAA_AAAA];
        let exa = [0u8, 3, 1, 2];
        let mut n = 0;
        for &s in &src {
            for &t in &trid {
                for &q in &seq {
                    for &p in &pdid {
                        for &i in &iova {
                            for &x in &exa {
                                let e = FaultFifoEntry { src_id: s, trid: t, seq: q, pdid: p, iova: i, exa_ack: x };
                                let mut f = FaultFifo::new(1);
                                f.push(e).unwrap();
                                let a = f.read64(FifoHalf::First).unwrap();
                                let b = f.read64(FifoHalf::Second).unwrap();
                                assert_eq!(FaultFifoEntry::from_halves(a, b).unwrap(), e);
                                n += 1;
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(n, 4096);
    }

    #[test]
    fn overflowing_fields_rejected() {
        let e = FaultFifoEntry { src_id: 1 << 22, ..Default::default() };
        assert!(e.encode().is_err());
        let e = FaultFifoEntry { trid: 1 << 14, ..Default::default() };
        assert!(e.encode().is_err());
        let e = FaultFifoEntry { exa_ack: 4, ..Default::default() };
        assert!(e.encode().is_err());
    }

    #[test]
    fn invalid_bit_detected() {
        let mut w = entry(1).encode().unwrap();
        w[2] &= !1;
        assert_eq!(FaultFifoEntry::decode(w), Err(FifoError::InvalidEntry(2)));
    }

    #[test]
    fn push_outcomes() {
        let mut f = FaultFifo::new(512);
        assert_eq!(f.push(entry(1)).unwrap(), PushOutcome::Pushed);
        assert_eq!(f.push(entry(1)).unwrap(), PushOutcome::DupSkipped);
        assert_eq!(f.push(entry(2)).unwrap(), PushOutcome::Pushed);
        assert_eq!(f.push(entry(1)).unwrap(), PushOutcome::Pushed);
        assert_eq!(f.len(), 3);
    }

    #[test]
    fn full_fifo_drops() {
        let mut f = FaultFifo::new(512);
        for i in 0..512 {
            assert_eq!(f.push(entry(i)).unwrap(), PushOutcome::Pushed);
        }
        assert_eq!(f.push(entry(512)).unwrap(), PushOutcome::DroppedFull);
        assert_eq!(f.drops, 1);
        assert_eq!(f.len(), 512);
    }

    #[test]
    fn burst_of_identical_nacks_pushes_once() {
        for k in 1..100 {
            let mut f = FaultFifo::default();
            let pushed = (0..k).filter(|_| f.push(entry(9)).unwrap() == PushOutcome::Pushed).count();
            assert_eq!(pushed, 1);
        }
    }

    #[test]
    fn read_protocol() {
        let mut f = FaultFifo::default();
        assert_eq!(f.read64(FifoHalf::First), Err(FifoError::EmptyFifo));
        f.push(entry(1)).unwrap();
        assert_eq!(f.read64(FifoHalf::Second), Err(FifoError::ProtocolViolation));
        assert_eq!(f.len(), 1);
        let a = f.read64(FifoHalf::First).unwrap();
        assert_eq!(f.read64(FifoHalf::First).unwrap(), a);
        assert_eq!(f.state(), ReadState::FirstHalfRead);
        f.read64(FifoHalf::Second).unwrap();
        assert!(f.is_empty());
        assert_eq!(f.state(), ReadState::Idle);
    }

    #[derive(Clone, Copy, Debug)]
    enum Op {
        Push,
        First,
        Second,
    }

    /// Transition table of the read FSM: (state, op, empty) -> (state, pops, result ok).
    fn oracle(state: u8, op: Op, empty: bool) -> (u8, bool, bool) {
        match (state, op, empty) {
            (s, Op::Push, _) => (s, false, true),
            (s, _, true) => (s, false, false),
            (_, Op::First, false) => (1, false, true),
            (1, Op::Second, false) => (0, true, true),
            (0, Op::Second, false) => (0, false, false),
            _ => unreachable!(),
        }
    }

    #[test]
    fn read_fsm_matches_enumerated_oracle() {
        let ops = [Op::Push, Op::First, Op::Second];
        for len in 1..=7u32 {
            for code in 0..3u32.pow(len) {
                let mut f = FaultFifo::default();
                let mut state = 0u8;
                let mut model_len = 0usize;
                let mut c = code;
                for step in 0..len {
                    let op = ops[(c % 3) as usize];
                    c /= 3;
                    let (next, pops, ok) = oracle(state, op, model_len == 0);
                    let got_ok = match op {
                        Op::Push => f.push(entry(step)).is_ok(),
                        Op::First => f.read64(FifoHalf::First).is_ok(),
                        Op::Second => f.read64(FifoHalf::Second).is_ok(),
                    };
                    if matches!(op, Op::Push) {
                        model_len += 1;
                    }
                    if pops {
                        model_len -= 1;
                    }
                    state = next;
                    assert_eq!(got_ok, ok, "code {code} step {step} {op:?}");
                    assert_eq!(f.len(), model_len);
                    let st = if state == 1 { ReadState::FirstHalfRead } else { ReadState::Idle };
                    assert_eq!(f.state(), st);
                }
            }
        }
    }
}
