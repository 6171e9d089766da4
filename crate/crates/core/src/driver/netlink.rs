//! Kernel-to-user page fault message: 27 hex digits, fixed-width fields,
//! most significant first.

use thiserror::Error;

pub const NETLINK_HEX_LEN: usize = 27;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct NetlinkPageFaultMsg {
    pub src_id: u32,
    pub trid: u16,
    pub seq: u16,
    pub iova: u32,
    pub pdid: u16,
    /// `false` for a source (read) fault, `true` for a destination fault.
    pub rw: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetlinkError {
    #[error("field {field} value {value:#x} exceeds {bits} bits")]
    FieldOverflow { field: &'static str, value: u64, bits: u32 },
    #[error("message has {0} digits, expected 27")]
    BadLength(usize),
    #[error("non-hex digit {0:?}")]
    BadDigit(char),
    #[error("read/write digit must be 0 or 1, got {0}")]
    BadRw(u8),
}

/// (name, hex digits, bit width) in wire order.
const FIELDS: [(&str, usize, u32); 6] =
    [("src_id", 6, 22), ("trid", 4, 14), ("seq", 4, 14), ("iova", 8, 32), ("pdid", 4, 16), ("rw", 1, 1)];

impl NetlinkPageFaultMsg {
    fn values(&self) -> [u64; 6] {
        [
            u64::from(self.src_id),
            u64::from(self.trid),
            u64::from(self.seq),
            u64::from(self.iova),
            u64::from(self.pdid),
            u64::from(self.rw),
        ]
    }

    pub fn encode(&self) -> Result<String, NetlinkError> {
        let mut out = String::with_capacity(NETLINK_HEX_LEN);
        for ((field, digits, bits), value) in FIELDS.iter().zip(self.values()) {
            if value >> bits != 0 {
                return Err(NetlinkError::FieldOverflow { field, value, bits: *bits });
            }
            out.push_str(&format!("{value:0width$x}", width = digits));
        }
        Ok(out)
    }

    pub fn decode(s: &str) -> Result<Self, NetlinkError> {
        if let Some(c) = s.chars().find(|c| !c.is_ascii_hexdigit()) {
            return Err(NetlinkError::BadDigit(c));
        }
        if s.len() != NETLINK_HEX_LEN {
            return Err(NetlinkError::BadLength(s.len()));
        }
        let mut vals = [0u64; 6];
        let mut pos = 0;
        for (i, (field, digits, bits)) in FIELDS.iter().enumerate() {
            let v = u64::from_str_radix(&s[pos..pos + digits], 16).expect("validated hex");
            if v >> bits != 0 {
                if *field == "rw" {
                    return Err(NetlinkError::BadRw(v as u8));
                }
                return Err(NetlinkError::FieldOverflow { field, value: v, bits: *bits });
            }
            vals[i] = v;
            pos += digits;
        }
        Ok(NetlinkPageFaultMsg {
            src_id: vals[0] as u32,
            trid: vals[1] as u16,
            seq: vals[2] as u16,
            iova: vals[3] as u32,
            pdid: vals[4] as u16,
            rw: vals[5] == 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_concatenation() {
        let m = NetlinkPageFaultMsg { src_id: 0, trid: 5, seq: 2, iova: 0x1000_0000, pdid: 3, rw: true };
        let s = m.encode().unwrap();
        assert_eq!(s, format!("{}{}{}{}{}{}", "000000", "0005", "0002", "10000000", "0003", "1"));
        assert_eq!(NetlinkPageFaultMsg::decode(&s).unwrap(), m);
    }

    #[test]
    fn all_zero() {
        let s = NetlinkPageFaultMsg::default().encode().unwrap();
        assert_eq!(s, "0".repeat(27));
    }

    #[test]
    fn boundary_exhaustion() {
        let src = [0u32, 0x3F_FFFF, 0x15_5555, 0x2A_AAAA];
        let tr = [0u16, 0x3FFF, 0x1555, 0x2AAA];
        let iova = [0u32, u32::MAX, 0x5555_5555, 0xAAAA_AAAA];
        let pd = [0u16, 0xFFFF, 0x5555, 0xAAAA];
        let mut n = 0;
        for &a in &src {
            for &b in &tr {
                for &c in &tr {
                    for &d in &iova {
                        for &e in &pd {
                            for rw in [false, true] {
                                let m = NetlinkPageFaultMsg { src_id: a, trid: b, seq: c, iova: d, pdid: e, rw };
                                let s = m.encode().unwrap();
                                assert_eq!(s.len(), 27);
                                assert_eq!(NetlinkPageFaultMsg::decode(&s).unwrap(), m);
                                n += 1;
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(n, 2048);
    }

    #[test]
    fn errors() {
        let m = NetlinkPageFaultMsg { src_id: 1 << 22, ..Default::default() };
        assert!(matches!(m.encode(), Err(NetlinkError::FieldOverflow { field: "src_id", .. })));
        let m = NetlinkPageFaultMsg { trid: 1 << 14, ..Default::default() };
        assert!(matches!(m.encode(), Err(NetlinkError::FieldOverflow { field: "trid", .. })));
        assert_eq!(NetlinkPageFaultMsg::decode("00"), Err(NetlinkError::BadLength(2)));
        assert_eq!(NetlinkPageFaultMsg::decode(&"g".repeat(27)), Err(NetlinkError::BadDigit('g')));
        let mut s = "0".repeat(26);
        s.push('2');
        assert_eq!(NetlinkPageFaultMsg::decode(&s), Err(NetlinkError::BadRw(2)));
        // trid field holds 0xFFFF: over 14 bits
        let s = format!("000000FFFF{}", "0".repeat(17));
        assert!(matches!(NetlinkPageFaultMsg::decode(&s), Err(NetlinkError::FieldOverflow { field: "trid", .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip(src in 0u32..1 << 22, trid in 0u16..1 << 14, seq in 0u16..1 << 14, iova: u32, pdid: u16, rw: bool) {
                let m = NetlinkPageFaultMsg { src_id: src, trid, seq, iova, pdid, rw };
                prop_assert_eq!(NetlinkPageFaultMsg::decode(&m.encode().unwrap()).unwrap(), m);
            }
        }
    }
}
