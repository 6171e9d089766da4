//! Measurement loops. Every transfer size gets its own simulation seeded
//! identically, so sizes can run on separate threads without changing any
//! result.

use std::thread;

use super::config::{FaultSite, Mode, ScenarioConfig, Strategy, SweepAxis};
use super::report::{BufferOverheads, SizeStats, StatsReport};
use super::BenchError;
use crate::mem::{FaultInjectorConfig, FrameAllocator, InitialState, MemoryManager, VirtAddr};
use crate::mem::{AddressSpace, CostModel};
use crate::sim::{Counter, LatencyAcc, Metrics, SimRng, SimTime};
use crate::system::{SimError, Simulation, TransferRequest};

pub const PDID: u16 = 1;
pub const PROC_IDX: u8 = 0;
pub const CHANNEL: u8 = 0;
const VA_BASE: u64 = 0x1000_0000;
/// Address space consumed per iteration: source, then destination half way.
const SLOT: u64 = 0x4_0000;

/// Sim-time budget for one transfer before it is declared stuck.
pub fn liveness_limit_ns(timeout_ns: u64) -> u64 {
    10_000_000_000u64.max(timeout_ns.saturating_mul(1_000))
}

pub(crate) fn pattern(len: u64, iteration: u64, salt: u8) -> Vec<u8> {
    (0..len).map(|k| (k.wrapping_mul(31) ^ iteration.wrapping_mul(7)) as u8 ^ salt).collect()
}

/// Byte-for-byte comparison of a finished transfer.
pub(crate) fn verify_copy(sim: &Simulation, src: u64, dst_node: usize, dst: u64, len: u64) -> Result<(), SimError> {
    let mut a = vec![0u8; len as usize];
    let mut b = vec![0u8; len as usize];
    let space = |n: usize| sim.nodes[n].mem.space(PDID, PROC_IDX).ok_or(SimError::UnboundDomain { pdid: PDID, proc_idx: PROC_IDX });
    space(0)?.read_bytes(VirtAddr(src), &mut a)?;
    space(dst_node)?.read_bytes(VirtAddr(dst), &mut b)?;
    if let Some(i) = a.iter().zip(&b).position(|(x, y)| x != y) {
        return Err(SimError::Invariant(format!(
            "destination byte {i} of {len} differs ({:#04x} != {:#04x})",
            b[i], a[i]
        )));
    }
    Ok(())
}

/// Runs one transfer to completion and returns its duration.
pub(crate) fn transfer(sim: &mut Simulation, req: TransferRequest) -> Result<u64, SimError> {
    let t0 = sim.now();
    let id = sim.submit_transfer(0, req)?;
    let limit = t0.after(liveness_limit_ns(sim.cfg.engine.timeout_ns));
    let t1 = sim.run_until_done(0, id, limit)?;
    Ok(t1.since(t0))
}

/// Lets stragglers (late retransmit requests, handler work) finish.
pub(crate) fn settle(sim: &mut Simulation) -> Result<(), SimError> {
    sim.run_until_idle(SimTime(u64::MAX))?;
    for n in &mut sim.nodes {
        n.engine.reap_completed();
    }
    Ok(())
}

/// Charged cost of each memory operation on one buffer of `size` bytes.
pub fn probe_overheads(costs: &CostModel, size: u64) -> Result<BufferOverheads, BenchError> {
    let mut mm = MemoryManager::new(costs.clone());
    mm.add_space(AddressSpace::new(PDID, PROC_IDX).with_pin_limit(u64::MAX));
    let (s, f, c) = mm.parts(PDID, PROC_IDX).map_err(SimError::from)?;
    let va = VirtAddr(VA_BASE);
    let run = |s: &mut AddressSpace, f: &mut FrameAllocator| -> Result<BufferOverheads, crate::mem::MemError> {
        let mmap_ns = s.map_region(va, size, &FaultInjectorConfig::default(), f, c)?;
        let touch_ns = s.touch_region(va, size, f, c)?;
        let pin_ns = s.pin_region(va, size, f, c)?;
        let unpin_ns = s.unpin_region(va, size, c)?;
        let munmap_ns = s.unmap_region(va, size, c)?;
        Ok(BufferOverheads { mmap_ns, munmap_ns, pin_ns, unpin_ns, touch_ns })
    };
    Ok(run(s, f).map_err(SimError::from)?)
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<StatsReport, BenchError> {
    cfg.validate()?;
    let rows = thread::scope(|scope| {
        let handles: Vec<_> = cfg.sizes.iter().map(|&size| scope.spawn(move || run_size(cfg, size))).collect();
        handles.into_iter().map(|h| h.join().expect("size worker panicked")).collect::<Result<Vec<_>, _>>()
    })?;
    Ok(StatsReport {
        strategy: cfg.strategy,
        policy: cfg.policy(),
        fault_site: cfg.fault_site,
        mode: cfg.mode,
        timeout_ns: cfg.timeout_ns(),
        seed: cfg.seed,
        knobs: cfg.knobs().into_iter().map(|(s, k, v)| (format!("{s}.{k}"), v)).collect(),
        rows,
    })
}

/// One report per axis value, all other settings (seed included) shared.
pub fn run_sweep(base: &ScenarioConfig, axis: SweepAxis) -> Result<Vec<StatsReport>, BenchError> {
    base.validate()?;
    let points: Vec<ScenarioConfig> = match axis {
        SweepAxis::Sizes => base.sweep.sizes.iter().map(|&s| ScenarioConfig { sizes: vec![s], ..base.clone() }).collect(),
        SweepAxis::Timeouts => base
            .sweep
            .timeouts_ns
            .iter()
            .map(|&t| {
                let mut c = base.clone();
                c.sim.engine.timeout_ns = t;
                c
            })
            .collect(),
        SweepAxis::Policies => base
            .sweep
            .policies
            .iter()
            .map(|&p| {
                let mut c = base.clone();
                c.sim.driver.policy = p;
                c
            })
            .collect(),
    };
    thread::scope(|scope| {
        let handles: Vec<_> = points.iter().map(|c| scope.spawn(move || run_scenario(c))).collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    })
}

struct Setup {
    src: u64,
    dst: u64,
    dst_node: usize,
    setup_ns: u64,
}

fn new_sim(cfg: &ScenarioConfig) -> Result<Simulation, SimError> {
    let mut sim = Simulation::new(cfg.sim.clone(), cfg.seed);
    sim.add_process(PDID, PROC_IDX)?;
    Ok(sim)
}

/// Maps both buffers resident, fills them and applies the strategy.
fn prepare(sim: &mut Simulation, cfg: &ScenarioConfig, size: u64, slot: u64) -> Result<Setup, SimError> {
    let src = VA_BASE + slot * SLOT;
    let dst = src + SLOT / 2;
    let dst_node = sim.nodes.len() - 1;
    let resident = FaultInjectorConfig { initial_state: InitialState::Present, ..Default::default() };
    let mut setup_ns = 0;
    for (node, va, salt) in [(0, src, 0xA5), (dst_node, dst, 0x5A)] {
        let data = pattern(size, slot, salt);
        setup_ns += sim.with_space(node, PDID, PROC_IDX, |s, f, c| {
            let ns = s.map_region(VirtAddr(va), size, &resident, f, c)?;
            s.write_bytes(VirtAddr(va), &data)?;
            Ok(ns + match cfg.strategy {
                Strategy::PreTouch => s.touch_region(VirtAddr(va), size, f, c)?,
                Strategy::PinUnpin => s.pin_region(VirtAddr(va), size, f, c)?,
                Strategy::FaultHandled => 0,
            })
        })?;
    }
    Ok(Setup { src, dst, dst_node, setup_ns })
}

fn teardown(sim: &mut Simulation, cfg: &ScenarioConfig, size: u64, b: &Setup) -> Result<u64, SimError> {
    let mut ns = 0;
    for (node, va) in [(0, b.src), (b.dst_node, b.dst)] {
        ns += sim.with_space(node, PDID, PROC_IDX, |s, _, c| {
            let unpin = if cfg.strategy == Strategy::PinUnpin { s.unpin_region(VirtAddr(va), size, c)? } else { 0 };
            Ok(unpin + s.unmap_region(VirtAddr(va), size, c)?)
        })?;
    }
    Ok(ns)
}

fn request(size: u64, b: &Setup) -> TransferRequest {
    TransferRequest {
        pdid: PDID,
        proc_idx: PROC_IDX,
        channel: CHANNEL,
        src_va: b.src,
        dst_va: b.dst,
        len: size,
        dst_node: b.dst_node,
    }
}

fn arm_thp(sim: &mut Simulation) {
    for node in 0..sim.nodes.len() {
        sim.arm_thp(node, 0);
    }
}

/// One timed iteration: setup, transfer and teardown are all inside the
/// measured interval, bracketed by one timestamp read.
fn real_iteration<R: rand::Rng>(
    sim: &mut Simulation,
    cfg: &ScenarioConfig,
    size: u64,
    i: u64,
    rng: &mut R,
) -> Result<u64, SimError> {
    let b = prepare(sim, cfg, size, i)?;
    for (on, node, va) in [(cfg.fault_site.src(), 0, b.src), (cfg.fault_site.dst(), b.dst_node, b.dst)] {
        if on {
            sim.with_space(node, PDID, PROC_IDX, |s, _, _| s.evict_region(VirtAddr(va), size, cfg.fault_fraction, rng))?;
        }
    }
    arm_thp(sim);
    let transfer_ns = transfer(sim, request(size, &b))?;
    settle(sim)?;
    verify_copy(sim, b.src, b.dst_node, b.dst, size)?;
    let teardown_ns = teardown(sim, cfg, size, &b)?;
    settle(sim)?;
    sim.check_full_invariants()?;
    Ok(b.setup_ns + transfer_ns + teardown_ns + cfg.clock_overhead_ns)
}

pub fn run_size(cfg: &ScenarioConfig, size: u64) -> Result<SizeStats, BenchError> {
    let iters = cfg.effective_iterations();
    let mut sim = new_sim(cfg)?;
    let mut acc = LatencyAcc::default();
    let base: Metrics;
    let mean_ns: u64;
    match cfg.mode {
        Mode::Real => {
            let mut rng = SimRng::new(cfg.seed).substream(&format!("evict/{size}"));
            for i in 0..cfg.cold_runs {
                real_iteration(&mut sim, cfg, size, i, &mut rng)?;
            }
            base = sim.metrics.clone();
            for i in cfg.cold_runs..cfg.cold_runs + iters {
                acc.record(real_iteration(&mut sim, cfg, size, i, &mut rng)?);
            }
            mean_ns = (acc.mean_ns()).round() as u64;
        }
        Mode::Ideal => {
            debug_assert_eq!(cfg.fault_site, FaultSite::None);
            let b = prepare(&mut sim, cfg, size, 0)?;
            for _ in 0..cfg.cold_runs {
                transfer(&mut sim, request(size, &b))?;
            }
            settle(&mut sim)?;
            base = sim.metrics.clone();
            let start = sim.now();
            for _ in 0..iters {
                acc.record(transfer(&mut sim, request(size, &b))?);
            }
            let total = sim.now().since(start) + 2 * cfg.clock_overhead_ns;
            mean_ns = (total as f64 / iters as f64).round() as u64;
            settle(&mut sim)?;
            verify_copy(&sim, b.src, b.dst_node, b.dst, size)?;
            teardown(&mut sim, cfg, size, &b)?;
            settle(&mut sim)?;
            sim.check_full_invariants()?;
        }
    }
    let m = sim.metrics.delta_since(&base);
    Ok(SizeStats {
        size_bytes: size,
        iterations: iters,
        mean_ns,
        min_ns: acc.min_ns,
        max_ns: acc.max_ns,
        timeouts: m.get(Counter::TimeoutsFired),
        handler_invocations: m.get(Counter::HandlerInvocations),
        rapf_sent: m.get(Counter::RapfSent),
        fifo_pushes: m.get(Counter::FifoPushes),
        fifo_dups: m.get(Counter::FifoDups),
        fifo_drops: m.get(Counter::FifoDrops),
        pages_touched: m.get(Counter::PagesTouched),
        driver_ns: (m.get(Counter::DriverTimeNs) as f64 / iters as f64).round() as u64,
        overheads: probe_overheads(&cfg.sim.costs, size)?,
    })
}
