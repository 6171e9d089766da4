//! 64-bit scheduler mailbox message. The low word carries the fields the
//! packetizer fills in itself, the high word carries the sender's fields.

use super::EngineError;

pub const OPCODE_RAPF: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct MailboxMsg {
    pub wired_opcode: u8,
    pub wired_pdid: u16,
    pub trid: u16,
    pub seq: u16,
    pub rcved_pdid: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MailboxOutcome {
    Retransmitted,
    StaleSeqIgnored,
    PdidMismatch,
    UnknownTrid,
    NotRapf,
}

impl MailboxMsg {
    pub fn encode(&self) -> Result<u64, EngineError> {
        if self.wired_opcode > 3 {
            return Err(EngineError::FieldOverflow { field: "opcode", value: u64::from(self.wired_opcode) });
        }
        if self.trid >= 1 << 14 {
            return Err(EngineError::FieldOverflow { field: "trid", value: u64::from(self.trid) });
        }
        let word0 = u32::from(self.wired_opcode) | (u32::from(self.wired_pdid) << 2) | (u32::from(self.trid) << 18);
        let word1 = u32::from(self.seq & 0xFFF) | (u32::from(self.rcved_pdid) << 12);
        Ok((u64::from(word1) << 32) | u64::from(word0))
    }

    pub fn decode(v: u64) -> Self {
        let word0 = v as u32;
        let word1 = (v >> 32) as u32;
        MailboxMsg {
            wired_opcode: (word0 & 0x3) as u8,
            wired_pdid: ((word0 >> 2) & 0xFFFF) as u16,
            trid: ((word0 >> 18) & 0x3FFF) as u16,
            seq: (word1 & 0xFFF) as u16,
            rcved_pdid: ((word1 >> 12) & 0xFFFF) as u16,
        }
    }

    pub fn is_rapf(&self) -> bool {
        self.wired_opcode == OPCODE_RAPF
    }

    /// Sequence numbers are only compared on their low 12 bits.
    pub fn seq_matches(&self, pending: u16) -> bool {
        self.seq & 0xFFF == pending & 0xFFF
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_decode_shifts() {
        let m = MailboxMsg { wired_opcode: 2, wired_pdid: 0xABCD, trid: 0x2345, seq: 0x0FED, rcved_pdid: 0x1234 };
        let v = m.encode().unwrap();
        let word0 = v as u32;
        let word1 = (v >> 32) as u32;
        assert_eq!(word0 & 0x3, 2);
        assert_eq!((word0 >> 2) & 0x0FFFF, 0xABCD);
        assert_eq!(word0 >> 18, 0x2345);
        assert_eq!(word1 & 0xFFF, 0xFED);
        assert_eq!((word1 >> 12) & 0xFFFF, 0x1234);
        assert_eq!(MailboxMsg::decode(v), m);
    }

    #[test]
    fn seq_truncated_to_twelve_bits() {
        let m = MailboxMsg { wired_opcode: 2, seq: 0x1005, ..Default::default() };
        let d = MailboxMsg::decode(m.encode().unwrap());
        assert_eq!(d.seq, 0x005);
        assert!(d.seq_matches(0x1005));
        assert!(d.seq_matches(0x2005));
        assert!(!d.seq_matches(0x0006));
    }

    #[test]
    fn boundary_round_trip() {
        for op in 0..4u8 {
            for &pd in &[0u16, 0xFFFF, 0x5555, 0xAAAA] {
                for &tr in &[0u16, 0x3FFF, 0x1555, 0x2AAA] {
                    for &sq in &[0u16, 0xFFF, 0x555, 0xAAA] {
                        let m = MailboxMsg { wired_opcode: op, wired_pdid: pd, trid: tr, seq: sq, rcved_pdid: !pd };
                        assert_eq!(MailboxMsg::decode(m.encode().unwrap()), m);
                    }
                }
            }
        }
    }

    #[test]
    fn overflow_rejected() {
        assert!(MailboxMsg { trid: 1 << 14, ..Default::default() }.encode().is_err());
        assert!(MailboxMsg { wired_opcode: 4, ..Default::default() }.encode().is_err());
    }
}
