//! Per-size results and their CSV and summary renderings.

use std::fmt::Write as _;

use thiserror::Error;

use super::config::{FaultSite, Mode, Strategy};
use crate::driver::HandlerPolicy;
use crate::mem::MemOp;

pub const CSV_HEADER: [&str; 11] = [
    "size_bytes",
    "strategy",
    "policy",
    "fault_site",
    "timeout_ns",
    "mean_us",
    "timeouts",
    "handler_invocations",
    "rapf_sent",
    "driver_ns",
    "seed",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },
}

/// Per-buffer cost of each memory operation, as charged by the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BufferOverheads {
    pub mmap_ns: u64,
    pub munmap_ns: u64,
    pub pin_ns: u64,
    pub unpin_ns: u64,
    pub touch_ns: u64,
}

impl BufferOverheads {
    pub fn get(&self, op: MemOp) -> u64 {
        match op {
            MemOp::Mmap => self.mmap_ns,
            MemOp::Munmap => self.munmap_ns,
            MemOp::Pin => self.pin_ns,
            MemOp::Unpin => self.unpin_ns,
            MemOp::Touch => self.touch_ns,
        }
    }
}

/// Results for one transfer size. Counters are totals over the measured
/// iterations; latencies and driver time are per iteration.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SizeStats {
    pub size_bytes: u64,
    pub iterations: u64,
    pub mean_ns: u64,
    pub min_ns: u64,
    pub max_ns: u64,
    pub timeouts: u64,
    pub handler_invocations: u64,
    pub rapf_sent: u64,
    pub fifo_pushes: u64,
    pub fifo_dups: u64,
    pub fifo_drops: u64,
    pub pages_touched: u64,
    /// Interrupt handler plus tasklet bodies, queueing excluded.
    pub driver_ns: u64,
    pub overheads: BufferOverheads,
}

impl SizeStats {
    pub fn mean_us(&self) -> f64 {
        self.mean_ns as f64 / 1_000.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatsReport {
    pub strategy: Strategy,
    pub policy: HandlerPolicy,
    pub fault_site: FaultSite,
    pub mode: Mode,
    pub timeout_ns: u64,
    pub seed: u64,
    pub knobs: Vec<(String, String)>,
    pub rows: Vec<SizeStats>,
}

impl StatsReport {
    pub fn row(&self, size: u64) -> Option<&SizeStats> {
        self.rows.iter().find(|r| r.size_bytes == size)
    }
}

/// The numeric content of one CSV line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvRow {
    pub size_bytes: u64,
    pub strategy: Strategy,
    pub policy: HandlerPolicy,
    pub fault_site: FaultSite,
    pub timeout_ns: u64,
    pub mean_ns: u64,
    pub timeouts: u64,
    pub handler_invocations: u64,
    pub rapf_sent: u64,
    pub driver_ns: u64,
    pub seed: u64,
}

impl CsvRow {
    pub fn of(report: &StatsReport, s: &SizeStats) -> Self {
        CsvRow {
            size_bytes: s.size_bytes,
            strategy: report.strategy,
            policy: report.policy,
            fault_site: report.fault_site,
            timeout_ns: report.timeout_ns,
            mean_ns: s.mean_ns,
            timeouts: s.timeouts,
            handler_invocations: s.handler_invocations,
            rapf_sent: s.rapf_sent,
            driver_ns: s.driver_ns,
            seed: report.seed,
        }
    }
}

fn fmt_us(ns: u64) -> String {
    format!("{}.{:03}", ns / 1_000, ns % 1_000)
}

fn parse_us(s: &str) -> Option<u64> {
    let (whole, frac) = s.split_once('.').unwrap_or((s, "0"));
    if frac.len() > 3 || frac.is_empty() {
        return None;
    }
    let frac_ns: u64 = format!("{frac:0<3}").parse().ok()?;
    Some(whole.parse::<u64>().ok()? * 1_000 + frac_ns)
}

/// Writes all rows of all reports under one header.
pub fn write_csv<W: std::io::Write>(reports: &[StatsReport], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        for s in &r.rows {
            let c = CsvRow::of(r, s);
            w.write_record([
                c.size_bytes.to_string(),
                c.strategy.to_string(),
                c.policy.to_string(),
                c.fault_site.to_string(),
                c.timeout_ns.to_string(),
                fmt_us(c.mean_ns),
                c.timeouts.to_string(),
                c.handler_invocations.to_string(),
                c.rapf_sent.to_string(),
                c.driver_ns.to_string(),
                c.seed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv(reports: &[StatsReport]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(reports, &mut buf).expect("writing to memory");
    buf
}

pub fn parse_csv(data: &[u8]) -> Result<Vec<CsvRow>, ReportError> {
    let mut r = csv::Reader::from_reader(data);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(ReportError::Parse { row: 0, msg: format!("unexpected header {header:?}") });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let err = |msg: String| ReportError::Parse { row, msg };
        let int = |k: usize| rec[k].parse::<u64>().map_err(|_| err(format!("{}: bad integer {:?}", CSV_HEADER[k], &rec[k])));
        rows.push(CsvRow {
            size_bytes: int(0)?,
            strategy: rec[1].parse().map_err(err)?,
            policy: rec[2].parse().map_err(err)?,
            fault_site: rec[3].parse().map_err(err)?,
            timeout_ns: int(4)?,
            mean_ns: parse_us(&rec[5]).ok_or_else(|| err(format!("mean_us: bad value {:?}", &rec[5])))?,
            timeouts: int(6)?,
            handler_invocations: int(7)?,
            rapf_sent: int(8)?,
            driver_ns: int(9)?,
            seed: int(10)?,
        });
    }
    Ok(rows)
}

/// Aligned table preceded by every knob value.
pub fn summary(reports: &[StatsReport]) -> String {
    let mut out = String::new();
    if let Some(first) = reports.first() {
        for (k, v) in &first.knobs {
            let _ = writeln!(out, "# {k} = {v}");
        }
        out.push('\n');
    }
    let head = [
        "size", "strategy", "policy", "fault", "mode", "timeout_ns", "iters", "mean_us", "min_us", "max_us", "timeouts",
        "handler", "rapf", "pushes", "dups", "drops", "touched", "driver_ns",
    ];
    let mut table: Vec<Vec<String>> = vec![head.iter().map(|s| s.to_string()).collect()];
    for r in reports {
        for s in &r.rows {
            table.push(vec![
                s.size_bytes.to_string(),
                r.strategy.to_string(),
                r.policy.to_string(),
                r.fault_site.to_string(),
                r.mode.to_string(),
                r.timeout_ns.to_string(),
                s.iterations.to_string(),
                fmt_us(s.mean_ns),
                fmt_us(s.min_ns),
                fmt_us(s.max_ns),
                s.timeouts.to_string(),
                s.handler_invocations.to_string(),
                s.rapf_sent.to_string(),
                s.fifo_pushes.to_string(),
                s.fifo_dups.to_string(),
                s.fifo_drops.to_string(),
                s.pages_touched.to_string(),
                s.driver_ns.to_string(),
            ]);
        }
    }
    render_table(&mut out, &table);

    out.push_str("\nper-buffer overheads (us)\n");
    let mut table = vec![vec!["size".to_string(), "mmap".into(), "munmap".into(), "pin".into(), "unpin".into(), "touch".into()]];
    let mut seen = Vec::new();
    for s in reports.iter().flat_map(|r| &r.rows) {
        if seen.contains(&s.size_bytes) {
            continue;
        }
        seen.push(s.size_bytes);
        let mut line = vec![s.size_bytes.to_string()];
        line.extend(MemOp::ALL.iter().map(|&op| fmt_us(s.overheads.get(op))));
        table.push(line);
    }
    render_table(&mut out, &table);
    out
}

fn render_table(out: &mut String, rows: &[Vec<String>]) {
    let cols = rows.first().map(Vec::len).unwrap_or(0);
    let widths: Vec<usize> = (0..cols).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, proptest};

    fn report(rows: Vec<SizeStats>) -> StatsReport {
        StatsReport {
            strategy: Strategy::FaultHandled,
            policy: HandlerPolicy::TouchAhead,
            fault_site: FaultSite::Src,
            mode: Mode::Real,
            timeout_ns: 1_000_000,
            seed: 9,
            knobs: vec![("wire.per_packet_ns".into(), "2680".into())],
            rows,
        }
    }

    #[test]
    fn header_is_exact() {
        let csv = to_csv(&[report(vec![])]);
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "size_bytes,strategy,policy,fault_site,timeout_ns,mean_us,timeouts,handler_invocations,rapf_sent,driver_ns,seed\n"
        );
    }

    #[test]
    fn one_size_one_row() {
        let r = report(vec![SizeStats { size_bytes: 16, mean_ns: 4_000, ..Default::default() }]);
        let text = String::from_utf8(to_csv(&[r])).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().nth(1).unwrap(), "16,fault_handled,touch_ahead,src,1000000,4.000,0,0,0,0,9");
    }

    #[test]
    fn us_formatting() {
        assert_eq!(fmt_us(0), "0.000");
        assert_eq!(fmt_us(4_012_345), "4012.345");
        assert_eq!(parse_us("4.5"), Some(4_500));
        assert_eq!(parse_us("7"), Some(7_000));
        assert_eq!(parse_us("1.2345"), None);
    }

    #[test]
    fn bad_csv_is_rejected() {
        assert!(parse_csv(b"a,b\n1,2\n").is_err());
        let mut text = String::from_utf8(to_csv(&[report(vec![SizeStats::default()])])).unwrap();
        text = text.replace("touch_ahead", "sideways");
        assert!(parse_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn summary_lists_knobs_and_rows() {
        let r = report(vec![SizeStats { size_bytes: 16384, timeouts: 4, ..Default::default() }]);
        let s = summary(&[r]);
        assert!(s.starts_with("# wire.per_packet_ns = 2680\n"));
        assert!(s.contains("16384"));
        assert!(s.contains("per-buffer overheads"));
    }

    proptest! {
        #[test]
        fn parse_inverts_emit(vals in proptest::collection::vec(proptest::array::uniform8(0u64..1 << 40), 0..6)) {
            let rows: Vec<SizeStats> = vals.iter().map(|v| SizeStats {
                size_bytes: v[0], mean_ns: v[1], timeouts: v[2], handler_invocations: v[3],
                rapf_sent: v[4], driver_ns: v[5], iterations: v[6], min_ns: v[7], ..Default::default()
            }).collect();
            let r = report(rows);
            let parsed = parse_csv(&to_csv(std::slice::from_ref(&r))).unwrap();
            let expect: Vec<CsvRow> = r.rows.iter().map(|s| CsvRow::of(&r, s)).collect();
            prop_assert_eq!(parsed, expect);
        }
    }
}
