//! Scenario configuration and its line-oriented `key = value` file format.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::driver::HandlerPolicy;
use crate::mem::{MemOp, COST_SIZES};
use crate::smmu::FaultConfig;
use crate::system::{SimConfig, ThpConfig};

/// Largest buffer a user may lock, and so the largest transfer size.
pub const MAX_SIZE: u64 = 65_536;
pub const DEFAULT_NO_FAULT_ITERATIONS: u64 = 10_000;
pub const DEFAULT_FAULT_ITERATIONS: u64 = 500;
pub const DEFAULT_SWEEP_TIMEOUTS_NS: [u64; 3] = [25_000_000, 2_500_000, 1_000_000];
/// Two 64 KiB buffers pinned at once.
pub const BENCH_PIN_LIMIT: u64 = 2 * MAX_SIZE;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: unknown key {key:?} in [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: {key}: {msg}")]
    BadValue { line: usize, key: String, msg: String },
    #[error("line {line}: {key} set twice")]
    Duplicate { line: usize, key: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!("expected one of: {}", [$($text),+].join(" | "))),
                }
            }
        }
    };
}

named_enum!(FaultSite { None => "none", Src => "src", Dst => "dst", Both => "both" });
named_enum!(Strategy { PreTouch => "pre_touch", PinUnpin => "pin_unpin", FaultHandled => "fault_handled" });
named_enum!(
    /// Ideal keeps all paging work outside one timed loop; Real times each
    /// iteration including its buffer setup and teardown.
    Mode { Ideal => "ideal", Real => "real" }
);
named_enum!(SweepAxis { Sizes => "sizes", Timeouts => "timeouts", Policies => "policies" });

impl FaultSite {
    pub fn src(self) -> bool {
        matches!(self, FaultSite::Src | FaultSite::Both)
    }

    pub fn dst(self) -> bool {
        matches!(self, FaultSite::Dst | FaultSite::Both)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepValues {
    pub sizes: Vec<u64>,
    pub timeouts_ns: Vec<u64>,
    pub policies: Vec<HandlerPolicy>,
}

impl Default for SweepValues {
    fn default() -> Self {
        SweepValues {
            sizes: COST_SIZES.to_vec(),
            timeouts_ns: DEFAULT_SWEEP_TIMEOUTS_NS.to_vec(),
            policies: vec![HandlerPolicy::TouchAPage, HandlerPolicy::TouchAhead],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub sizes: Vec<u64>,
    /// `None` picks the default for the fault site.
    pub iterations: Option<u64>,
    pub fault_site: FaultSite,
    /// Share of each faulted buffer's pages made non-resident.
    pub fault_fraction: f64,
    pub strategy: Strategy,
    pub mode: Mode,
    pub seed: u64,
    /// Warm-up iterations excluded from every statistic.
    pub cold_runs: u64,
    /// Cost of one timestamp read.
    pub clock_overhead_ns: u64,
    pub sim: SimConfig,
    pub sweep: SweepValues,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            sizes: COST_SIZES.to_vec(),
            iterations: None,
            fault_site: FaultSite::None,
            fault_fraction: 1.0,
            strategy: Strategy::FaultHandled,
            mode: Mode::Real,
            seed: 1,
            cold_runs: 1,
            clock_overhead_ns: 100,
            sim: SimConfig { pin_limit: BENCH_PIN_LIMIT, ..SimConfig::default() },
            sweep: SweepValues::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn policy(&self) -> HandlerPolicy {
        self.sim.driver.policy
    }

    pub fn timeout_ns(&self) -> u64 {
        self.sim.engine.timeout_ns
    }

    pub fn effective_iterations(&self) -> u64 {
        self.iterations.unwrap_or(if self.fault_site == FaultSite::None {
            DEFAULT_NO_FAULT_ITERATIONS
        } else {
            DEFAULT_FAULT_ITERATIONS
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.sizes.is_empty() {
            return bad("sizes must not be empty".into());
        }
        for &s in self.sizes.iter().chain(&self.sweep.sizes) {
            if !COST_SIZES.contains(&s) {
                return bad(format!("size {s} not one of {COST_SIZES:?}"));
            }
        }
        if self.iterations == Some(0) {
            return bad("iterations must be positive".into());
        }
        if self.mode == Mode::Ideal && self.fault_site != FaultSite::None {
            return bad("ideal mode requires fault_site = none".into());
        }
        if self.strategy == Strategy::PinUnpin && self.fault_site != FaultSite::None {
            return bad("pinned buffers cannot fault; use pin_unpin with fault_site = none".into());
        }
        if !(0.0..=1.0).contains(&self.fault_fraction) {
            return bad(format!("fault_fraction {} outside [0, 1]", self.fault_fraction));
        }
        if self.sim.sctlr.cfcfg == FaultConfig::Stall {
            return bad("stall fault mode has no recovery path in the benchmark; use terminate".into());
        }
        if self.timeout_ns() == 0 {
            return bad("timeout_ns must be positive".into());
        }
        let e = &self.sim.engine;
        if e.outstanding_per_transfer == 0 || e.fifo_depth == 0 {
            return bad("outstanding_per_transfer and fifo_depth must be positive".into());
        }
        let m = &self.sim.smmu;
        if m.tlb_depth == 0 || m.ptw_limit == 0 || m.tbu_outstanding == 0 {
            return bad("tlb_depth, ptw_limit and tbu_outstanding must be positive".into());
        }
        if let Some(t) = self.sim.thp {
            if !t.range_pages.is_power_of_two() || t.period_ns == 0 {
                return bad("thp range_pages must be a power of two and period_ns positive".into());
            }
        }
        if self.sim.pin_limit < 2 * self.sizes.iter().max().copied().unwrap_or(0) && self.strategy == Strategy::PinUnpin {
            return bad(format!("pin_limit {} cannot hold both buffers", self.sim.pin_limit));
        }
        if self.sweep.timeouts_ns.is_empty() || self.sweep.policies.is_empty() || self.sweep.sizes.is_empty() {
            return bad("sweep axes must not be empty".into());
        }
        if self.sweep.timeouts_ns.contains(&0) {
            return bad("sweep timeouts must be positive".into());
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        let mut section = String::from("scenario");
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line, msg: "unterminated section header".into() })?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::UnknownSection { line, name: name.into() });
                }
                section = name.into();
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, msg: format!("expected key = value, got {content:?}") })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line, msg: "empty key".into() });
            }
            if !seen.insert(format!("{section}.{key}")) {
                return Err(ConfigError::Duplicate { line, key: key.into() });
            }
            match cfg.set(&section, key, value) {
                Ok(true) => {}
                Ok(false) => return Err(ConfigError::UnknownKey { line, section, key: key.into() }),
                Err(msg) => return Err(ConfigError::BadValue { line, key: key.into(), msg }),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Self::parse(&text)
    }

    /// Applies one setting. `Ok(false)` means the key is not known.
    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<bool, String> {
        let s = &mut self.sim;
        match (section, key) {
            ("scenario", "sizes") => self.sizes = list(v)?,
            ("scenario", "iterations") => self.iterations = Some(num(v)?),
            ("scenario", "fault_site") => self.fault_site = v.parse()?,
            ("scenario", "fault_fraction") => self.fault_fraction = v.parse().map_err(|_| format!("bad number {v:?}"))?,
            ("scenario", "policy") => s.driver.policy = v.parse()?,
            ("scenario", "strategy") => self.strategy = v.parse()?,
            ("scenario", "mode") => self.mode = v.parse()?,
            ("scenario", "timeout_ns") => s.engine.timeout_ns = num(v)?,
            ("scenario", "seed") => self.seed = num(v)?,
            ("scenario", "cold_runs") => self.cold_runs = num(v)?,
            ("scenario", "clock_overhead_ns") => self.clock_overhead_ns = num(v)?,

            ("sweep", "sizes") => self.sweep.sizes = list(v)?,
            ("sweep", "timeouts_ns") => self.sweep.timeouts_ns = list(v)?,
            ("sweep", "policies") => {
                self.sweep.policies = v.split(',').map(|p| p.trim().parse()).collect::<Result<_, _>>()?
            }

            ("wire", "per_packet_ns") => s.wire.per_packet_ns = num(v)?,
            ("wire", "per_hop_ns") => s.wire.per_hop_ns = num(v)?,
            ("wire", "hops") => s.wire.hops = num(v)?,
            ("wire", "ack_ns") => s.wire.ack_ns = num(v)?,

            ("engine", "outstanding_per_transfer") => s.engine.outstanding_per_transfer = num(v)?,
            ("engine", "fifo_depth") => s.engine.fifo_depth = num(v)?,
            ("engine", "r5_dispatch_ns") => s.engine.r5_dispatch_ns = num(v)?,
            ("engine", "r5_poll_ns") => s.engine.r5_poll_ns = num(v)?,
            ("engine", "packet_gap_ns") => s.engine.packet_gap_ns = num(v)?,
            ("engine", "completion_ns") => s.engine.completion_ns = num(v)?,

            ("smmu", "tlb_depth") => s.smmu.tlb_depth = num(v)?,
            ("smmu", "ptw_limit") => s.smmu.ptw_limit = num(v)?,
            ("smmu", "tbu_outstanding") => s.smmu.tbu_outstanding = num(v)?,
            ("smmu", "tlb_hit_ns") => s.smmu.tlb_hit_ns = num(v)?,
            ("smmu", "walk_ns") => s.smmu.walk_ns = num(v)?,
            ("smmu", "irq_latency_ns") => s.smmu.irq_latency_ns = num(v)?,
            ("smmu", "hupcf") => s.sctlr.hupcf = boolean(v)?,
            ("smmu", "fault_mode") => {
                s.sctlr.cfcfg = match v {
                    "terminate" => FaultConfig::Terminate,
                    "stall" => FaultConfig::Stall,
                    _ => return Err("expected terminate | stall".into()),
                }
            }

            ("driver", "irq_handler_ns") => s.driver.irq_handler_ns = num(v)?,
            ("driver", "tasklet_delay_ns") => s.driver.tasklet_delay_ns = num(v)?,
            ("driver", "tasklet_fixed_ns") => s.driver.tasklet_fixed_ns = num(v)?,
            ("driver", "netlink_send_ns") => s.driver.netlink_send_ns = num(v)?,
            ("driver", "netlink_roundtrip_ns") => s.driver.netlink_roundtrip_ns = num(v)?,
            ("driver", "pckzer_ns") => s.driver.pckzer_ns = num(v)?,
            ("driver", "fifo_read_ns") => s.driver.fifo_read_ns = num(v)?,
            ("driver", "absorb_segfault") => s.driver.absorb_segfault = boolean(v)?,
            ("driver", "kernel_rapf") => s.driver.kernel_rapf = boolean(v)?,

            ("costs", k) if cost_op(k).is_some() => {
                let vals: Vec<u64> = list(v)?;
                let row: [u64; 8] = vals.try_into().map_err(|_| "expected 8 comma-separated values".to_string())?;
                *s.costs.row_mut(cost_op(k).expect("checked")) = row;
            }
            ("costs", "minor_fault_ns") => s.costs.minor_fault_ns = num(v)?,
            ("costs", "major_fault_io_ns") => s.costs.major_fault_io_ns = num(v)?,
            ("costs", "gup_per_page_ns") => s.costs.gup_per_page_ns = num(v)?,

            ("memory", "pin_limit") => s.pin_limit = num(v)?,
            ("memory", "va_width") => s.va_width = num(v)?,

            ("thp", "enabled") => {
                s.thp = if boolean(v)? { Some(s.thp.unwrap_or_default()) } else { None };
            }
            ("thp", "period_ns") => s.thp.get_or_insert_with(ThpConfig::default).period_ns = num(v)?,
            ("thp", "range_pages") => s.thp.get_or_insert_with(ThpConfig::default).range_pages = num(v)?,
            ("thp", "max_ticks") => s.thp.get_or_insert_with(ThpConfig::default).max_ticks = num(v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every knob as `(section, key, value)`, in file order. Feeding the
    /// result back through [`ScenarioConfig::parse`] reproduces `self`.
    pub fn knobs(&self) -> Vec<(&'static str, &'static str, String)> {
        let s = &self.sim;
        let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(", ");
        let mut out = vec![
            ("scenario", "sizes", join(&self.sizes)),
            ("scenario", "iterations", self.effective_iterations().to_string()),
            ("scenario", "fault_site", self.fault_site.to_string()),
            ("scenario", "fault_fraction", format!("{:?}", self.fault_fraction)),
            ("scenario", "policy", self.policy().to_string()),
            ("scenario", "strategy", self.strategy.to_string()),
            ("scenario", "mode", self.mode.to_string()),
            ("scenario", "timeout_ns", self.timeout_ns().to_string()),
            ("scenario", "seed", self.seed.to_string()),
            ("scenario", "cold_runs", self.cold_runs.to_string()),
            ("scenario", "clock_overhead_ns", self.clock_overhead_ns.to_string()),
            ("sweep", "sizes", join(&self.sweep.sizes)),
            ("sweep", "timeouts_ns", join(&self.sweep.timeouts_ns)),
            (
                "sweep",
                "policies",
                self.sweep.policies.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(", "),
            ),
            ("wire", "per_packet_ns", s.wire.per_packet_ns.to_string()),
            ("wire", "per_hop_ns", s.wire.per_hop_ns.to_string()),
            ("wire", "hops", s.wire.hops.to_string()),
            ("wire", "ack_ns", s.wire.ack_ns.to_string()),
            ("engine", "outstanding_per_transfer", s.engine.outstanding_per_transfer.to_string()),
            ("engine", "fifo_depth", s.engine.fifo_depth.to_string()),
            ("engine", "r5_dispatch_ns", s.engine.r5_dispatch_ns.to_string()),
            ("engine", "r5_poll_ns", s.engine.r5_poll_ns.to_string()),
            ("engine", "packet_gap_ns", s.engine.packet_gap_ns.to_string()),
            ("engine", "completion_ns", s.engine.completion_ns.to_string()),
            ("smmu", "tlb_depth", s.smmu.tlb_depth.to_string()),
            ("smmu", "ptw_limit", s.smmu.ptw_limit.to_string()),
            ("smmu", "tbu_outstanding", s.smmu.tbu_outstanding.to_string()),
            ("smmu", "tlb_hit_ns", s.smmu.tlb_hit_ns.to_string()),
            ("smmu", "walk_ns", s.smmu.walk_ns.to_string()),
            ("smmu", "irq_latency_ns", s.smmu.irq_latency_ns.to_string()),
            ("smmu", "hupcf", s.sctlr.hupcf.to_string()),
            (
                "smmu",
                "fault_mode",
                match s.sctlr.cfcfg {
                    FaultConfig::Terminate => "terminate",
                    FaultConfig::Stall => "stall",
                }
                .into(),
            ),
            ("driver", "irq_handler_ns", s.driver.irq_handler_ns.to_string()),
            ("driver", "tasklet_delay_ns", s.driver.tasklet_delay_ns.to_string()),
            ("driver", "tasklet_fixed_ns", s.driver.tasklet_fixed_ns.to_string()),
            ("driver", "netlink_send_ns", s.driver.netlink_send_ns.to_string()),
            ("driver", "netlink_roundtrip_ns", s.driver.netlink_roundtrip_ns.to_string()),
            ("driver", "pckzer_ns", s.driver.pckzer_ns.to_string()),
            ("driver", "fifo_read_ns", s.driver.fifo_read_ns.to_string()),
            ("driver", "absorb_segfault", s.driver.absorb_segfault.to_string()),
            ("driver", "kernel_rapf", s.driver.kernel_rapf.to_string()),
        ];
        for op in MemOp::ALL {
            out.push(("costs", cost_key(op), join(s.costs.row(op))));
        }
        out.extend([
            ("costs", "minor_fault_ns", s.costs.minor_fault_ns.to_string()),
            ("costs", "major_fault_io_ns", s.costs.major_fault_io_ns.to_string()),
            ("costs", "gup_per_page_ns", s.costs.gup_per_page_ns.to_string()),
            ("memory", "pin_limit", s.pin_limit.to_string()),
            ("memory", "va_width", s.va_width.to_string()),
            ("thp", "enabled", s.thp.is_some().to_string()),
        ]);
        if let Some(t) = s.thp {
            out.extend([
                ("thp", "period_ns", t.period_ns.to_string()),
                ("thp", "range_pages", t.range_pages.to_string()),
                ("thp", "max_ticks", t.max_ticks.to_string()),
            ]);
        }
        out
    }

    /// Renders a config file that parses back to `self`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (section, key, value) in self.knobs() {
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{section}]\n"));
                current = section;
            }
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }
}

const SECTIONS: [&str; 9] = ["scenario", "sweep", "wire", "engine", "smmu", "driver", "costs", "memory", "thp"];

fn cost_key(op: MemOp) -> &'static str {
    match op {
        MemOp::Mmap => "mmap_us",
        MemOp::Munmap => "munmap_us",
        MemOp::Pin => "pin_us",
        MemOp::Unpin => "unpin_us",
        MemOp::Touch => "touch_us",
    }
}

fn cost_op(key: &str) -> Option<MemOp> {
    MemOp::ALL.into_iter().find(|&op| cost_key(op) == key)
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.replace('_', "").parse().map_err(|_| format!("bad integer {v:?}"))
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>, String> {
    v.split(',').map(|x| num(x.trim())).collect()
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true | false, got {v:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let c = ScenarioConfig::parse("[scenario]\nsizes = 16, 16384\nfault_site = src\npolicy = touch_ahead\n").unwrap();
        assert_eq!(c.sizes, vec![16, 16384]);
        assert_eq!(c.fault_site, FaultSite::Src);
        assert_eq!(c.policy(), HandlerPolicy::TouchAhead);
        assert_eq!(c.effective_iterations(), 500);
        assert_eq!(ScenarioConfig::parse("").unwrap().effective_iterations(), 10_000);
    }

    #[test]
    fn comments_blank_lines_and_underscores() {
        let c = ScenarioConfig::parse("# header\n\ntimeout_ns = 2_500_000  # trailing\n[wire]\nhops = 1\n").unwrap();
        assert_eq!(c.timeout_ns(), 2_500_000);
        assert_eq!(c.sim.wire.hops, 1);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let e = ScenarioConfig::parse("[wire]\nper_packet = 3\n").unwrap_err();
        assert_eq!(e, ConfigError::UnknownKey { line: 2, section: "wire".into(), key: "per_packet".into() });
        // a key that exists, but in another section
        assert!(matches!(ScenarioConfig::parse("[wire]\nseed = 3\n"), Err(ConfigError::UnknownKey { .. })));
    }

    #[test]
    fn other_errors() {
        assert!(matches!(ScenarioConfig::parse("[nope]\n"), Err(ConfigError::UnknownSection { line: 1, .. })));
        assert!(matches!(ScenarioConfig::parse("[wire\n"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(ScenarioConfig::parse("seed\n"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(ScenarioConfig::parse("seed = x\n"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(ScenarioConfig::parse("seed = 1\nseed = 2\n"), Err(ConfigError::Duplicate { line: 2, .. })));
        assert!(matches!(ScenarioConfig::parse("mode = fast\n"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(ScenarioConfig::parse("[costs]\npin_us = 1, 2\n"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn semantic_checks() {
        let invalid = |t: &str| matches!(ScenarioConfig::parse(t), Err(ConfigError::Invalid(_)));
        assert!(invalid("mode = ideal\nfault_site = dst\n"));
        assert!(invalid("sizes = 100\n"));
        assert!(invalid("sizes = 131072\n"));
        assert!(invalid("iterations = 0\n"));
        assert!(invalid("fault_fraction = 1.5\n"));
        assert!(invalid("strategy = pin_unpin\nfault_site = src\n"));
        assert!(invalid("[smmu]\nfault_mode = stall\n"));
        assert!(invalid("[thp]\nrange_pages = 3\n"));
        assert!(invalid("[sweep]\ntimeouts_ns = 0\n"));
        assert!(ScenarioConfig::parse("mode = ideal\nstrategy = pin_unpin\n").is_ok());
    }

    #[test]
    fn render_round_trips() {
        let mut c = ScenarioConfig::parse("fault_site = both\n[thp]\nenabled = true\nmax_ticks = 2\n[costs]\ntouch_us = 1,2,3,4,5,6,7,8\n").unwrap();
        c.iterations = Some(7);
        assert_eq!(ScenarioConfig::parse(&c.render()).unwrap(), c);
        let d = ScenarioConfig { iterations: Some(10_000), ..ScenarioConfig::default() };
        assert_eq!(ScenarioConfig::parse(&d.render()).unwrap(), d);
    }

    #[test]
    fn every_rendered_key_is_accepted() {
        let mut c = ScenarioConfig::default();
        c.sim.thp = Some(ThpConfig::default());
        for (section, key, value) in c.knobs() {
            assert_eq!(c.clone().set(section, key, &value), Ok(true), "{section}.{key}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn random_configs_round_trip(
                sizes in proptest::sample::subsequence(COST_SIZES.to_vec(), 1..=8),
                iters in 1u64..100_000,
                site in 0usize..4,
                frac in 0.0f64..=1.0,
                ahead: bool,
                timeout in 1u64..100_000_000,
                seed: u64,
                per_packet in 0u64..100_000,
                hops in 0u32..4,
                hupcf: bool,
                kernel_rapf: bool,
                thp in proptest::option::of((1u64..10_000_000, 0u32..12, 0u64..10)),
            ) {
                let mut c = ScenarioConfig { sizes, iterations: Some(iters), fault_site: FaultSite::ALL[site], fault_fraction: frac, seed, ..Default::default() };
                c.sim.driver.policy = if ahead { HandlerPolicy::TouchAhead } else { HandlerPolicy::TouchAPage };
                c.sim.engine.timeout_ns = timeout;
                c.sim.wire.per_packet_ns = per_packet;
                c.sim.wire.hops = hops;
                c.sim.sctlr.hupcf = hupcf;
                c.sim.driver.kernel_rapf = kernel_rapf;
                c.sim.thp = thp.map(|(p, r, m)| ThpConfig { period_ns: p, range_pages: 1 << r, max_ticks: m });
                prop_assert_eq!(ScenarioConfig::parse(&c.render()).unwrap(), c);
            }
        }
    }
}
