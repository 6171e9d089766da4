//! Randomized single-transfer scenarios for integrity and liveness checks.

use std::thread;

use rand::Rng;

use super::runner::{pattern, settle, transfer, verify_copy, CHANNEL, PDID, PROC_IDX};
use super::BenchError;
use super::config::{FaultSite, MAX_SIZE, BENCH_PIN_LIMIT};
use crate::driver::HandlerPolicy;
use crate::mem::{FaultInjectorConfig, InitialState, VirtAddr, PAGE_SIZE};
use crate::sim::{Counter, SimRng};
use crate::system::{SimConfig, SimError, Simulation, ThpConfig, TransferRequest};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DstFaultKind {
    NotPresent,
    CopyOnWrite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoakCase {
    pub index: u64,
    pub size: u64,
    pub src_offset: u64,
    pub dst_offset: u64,
    pub fault_site: FaultSite,
    pub dst_kind: DstFaultKind,
    pub fraction: f64,
    pub policy: HandlerPolicy,
    pub kernel_rapf: bool,
    pub hops: u32,
    pub timeout_ns: u64,
    /// First huge-page pass delay and period, if any.
    pub thp: Option<(u64, u64)>,
}

impl SoakCase {
    pub fn generate(seed: u64, index: u64) -> Self {
        let mut rng = SimRng::new(seed).substream(&format!("soak/{index}"));
        SoakCase {
            index,
            size: rng.gen_range(1..=MAX_SIZE),
            src_offset: rng.gen_range(0..PAGE_SIZE),
            dst_offset: rng.gen_range(0..PAGE_SIZE),
            fault_site: FaultSite::ALL[rng.gen_range(0..FaultSite::ALL.len())],
            dst_kind: if rng.gen_bool(0.3) { DstFaultKind::CopyOnWrite } else { DstFaultKind::NotPresent },
            fraction: [1.0, 0.5, 0.25][rng.gen_range(0..3)],
            policy: if rng.gen_bool(0.5) { HandlerPolicy::TouchAPage } else { HandlerPolicy::TouchAhead },
            kernel_rapf: rng.gen_bool(0.3),
            hops: rng.gen_range(0..=1),
            timeout_ns: [100_000, 1_000_000][rng.gen_range(0..2)],
            thp: rng.gen_bool(0.4).then(|| (rng.gen_range(0..20_000), rng.gen_range(2_000..100_000))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoakOutcome {
    pub case: SoakCase,
    pub latency_ns: u64,
    pub timeouts: u64,
    pub handler_invocations: u64,
    pub rapf_sent: u64,
    pub retransmissions: u64,
    pub thp_invalidations: u64,
}

pub fn run_case(case: &SoakCase, seed: u64) -> Result<SoakOutcome, SimError> {
    let mut cfg = SimConfig { pin_limit: BENCH_PIN_LIMIT, ..SimConfig::default() };
    cfg.wire.hops = case.hops;
    cfg.engine.timeout_ns = case.timeout_ns;
    cfg.driver.policy = case.policy;
    cfg.driver.kernel_rapf = case.kernel_rapf;
    cfg.thp = case.thp.map(|(_, period)| ThpConfig { period_ns: period, range_pages: 16, max_ticks: 3 });
    let mut sim = Simulation::new(cfg, seed ^ case.index);
    sim.add_process(PDID, PROC_IDX)?;
    let dst_node = sim.nodes.len() - 1;
    let src = 0x4000_0000 + case.src_offset;
    let dst = 0x8000_0000 + case.dst_offset;
    let resident = FaultInjectorConfig { initial_state: InitialState::Present, ..Default::default() };
    let mut rng = SimRng::new(seed).substream(&format!("soak-evict/{}", case.index));
    for (node, va, salt, faulted) in [(0, src, 0x3C, case.fault_site.src()), (dst_node, dst, 0xC3, case.fault_site.dst())] {
        let data = pattern(case.size, case.index, salt);
        let cow = node == dst_node && va == dst && case.dst_kind == DstFaultKind::CopyOnWrite;
        sim.with_space(node, PDID, PROC_IDX, |s, f, c| {
            s.map_region(VirtAddr(va), case.size, &resident, f, c)?;
            s.write_bytes(VirtAddr(va), &data)?;
            if faulted {
                if cow {
                    s.share_cow_region(VirtAddr(va), case.size)?;
                } else {
                    s.evict_region(VirtAddr(va), case.size, case.fraction, &mut rng)?;
                }
            }
            Ok(())
        })?;
    }
    if let Some((delay, _)) = case.thp {
        for node in 0..sim.nodes.len() {
            sim.arm_thp(node, delay);
        }
    }
    let req = TransferRequest { pdid: PDID, proc_idx: PROC_IDX, channel: CHANNEL, src_va: src, dst_va: dst, len: case.size, dst_node };
    let latency_ns = transfer(&mut sim, req)?;
    settle(&mut sim)?;
    verify_copy(&sim, src, dst_node, dst, case.size)?;
    sim.check_full_invariants()?;
    let m = &sim.metrics;
    Ok(SoakOutcome {
        case: case.clone(),
        latency_ns,
        timeouts: m.get(Counter::TimeoutsFired),
        handler_invocations: m.get(Counter::HandlerInvocations),
        rapf_sent: m.get(Counter::RapfSent),
        retransmissions: m.get(Counter::Retransmissions),
        thp_invalidations: m.get(Counter::ThpInvalidations),
    })
}

/// Runs `count` generated cases across worker threads; results are in case
/// order regardless of scheduling.
pub fn soak(seed: u64, count: u64) -> Result<Vec<SoakOutcome>, BenchError> {
    let workers = thread::available_parallelism().map(|n| n.get()).unwrap_or(4) as u64;
    let chunk = count.div_ceil(workers.max(1)).max(1);
    let parts: Vec<Result<Vec<SoakOutcome>, BenchError>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..count)
            .step_by(chunk as usize)
            .map(|start| {
                scope.spawn(move || {
                    (start..(start + chunk).min(count))
                        .map(|i| {
                            let case = SoakCase::generate(seed, i);
                            run_case(&case, seed).map_err(|e| BenchError::Soak { index: i, source: e })
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("soak worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(count as usize);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn soak_csv(outcomes: &[SoakOutcome]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "index", "size", "src_offset", "dst_offset", "fault_site", "dst_kind", "fraction", "policy", "kernel_rapf",
        "hops", "timeout_ns", "thp", "latency_ns", "timeouts", "handler_invocations", "rapf_sent", "retransmissions",
        "thp_invalidations",
    ])
    .expect("in-memory csv");
    for o in outcomes {
        let c = &o.case;
        w.write_record([
            c.index.to_string(),
            c.size.to_string(),
            c.src_offset.to_string(),
            c.dst_offset.to_string(),
            c.fault_site.to_string(),
            format!("{:?}", c.dst_kind),
            c.fraction.to_string(),
            c.policy.to_string(),
            c.kernel_rapf.to_string(),
            c.hops.to_string(),
            c.timeout_ns.to_string(),
            c.thp.map(|(d, p)| format!("{d}/{p}")).unwrap_or_default(),
            o.latency_ns.to_string(),
            o.timeouts.to_string(),
            o.handler_invocations.to_string(),
            o.rapf_sent.to_string(),
            o.retransmissions.to_string(),
            o.thp_invalidations.to_string(),
        ])
        .expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}
