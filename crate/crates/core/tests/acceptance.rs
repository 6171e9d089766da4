//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each and exits non-zero if any failed.

use std::time::Instant;

use pfsim::bench::calibrate::{anchor_mean_us, calibrate};
use pfsim::bench::runner::{probe_overheads, run_scenario, run_sweep};
use pfsim::bench::soak::{soak, soak_csv};
use pfsim::bench::{to_csv, FaultSite, ScenarioConfig, SweepAxis};
use pfsim::driver::NetlinkPageFaultMsg;
use pfsim::mem::{AddressSpace, FaultInjectorConfig, InitialState, MemOp, MemoryManager, VirtAddr, COST_SIZES};
use pfsim::rdma::{segment, FaultFifo, FaultFifoEntry, FifoHalf};
use pfsim::sim::{Counter, SimTime};
use pfsim::smmu::{FaultConfig, ResumeAction, SctlrFlags, Smmu, SmmuConfig, StreamFields, StreamId, Translation};
use pfsim::system::{SimConfig, Simulation, TransferRequest};

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn scenario(text: &str) -> ScenarioConfig {
    ScenarioConfig::parse(text).expect("scenario text is valid")
}

fn run(text: &str) -> Result<pfsim::bench::StatsReport, String> {
    run_scenario(&scenario(text)).map_err(|e| e.to_string())
}

fn c1_calibration() -> Outcome {
    let (cfg, rec) = calibrate(&ScenarioConfig::default(), 4.0).map_err(|e| e.to_string())?;
    let mean = anchor_mean_us(&cfg, rec.per_packet_ns, 10_000).map_err(|e| e.to_string())?;
    check((mean - 4.0).abs() <= 0.04, format!("16 B ideal mean {mean:.4} us"))?;
    Ok(format!("per_packet_ns={} mean={mean:.4} us", rec.per_packet_ns))
}

/// Per-buffer overheads in microseconds: mmap, munmap, pin, unpin, touch.
const OVERHEAD_TABLE: [(u64, [u64; 5]); 8] = [
    (16, [2, 6, 6, 2, 3]),
    (64, [2, 6, 6, 2, 3]),
    (256, [2, 6, 6, 2, 3]),
    (1024, [2, 6, 6, 2, 3]),
    (4096, [2, 7, 6, 2, 3]),
    (16384, [2, 10, 15, 5, 10]),
    (32768, [2, 12, 27, 8, 19]),
    (65536, [2, 19, 49, 14, 40]),
];

fn c2_cost_table() -> Outcome {
    let ops = [MemOp::Mmap, MemOp::Munmap, MemOp::Pin, MemOp::Unpin, MemOp::Touch];
    let report = run("iterations = 1\nmode = ideal\n")?;
    for (size, row) in OVERHEAD_TABLE {
        let reported = report.row(size).ok_or(format!("no row for {size}"))?.overheads;
        let probed = probe_overheads(&Default::default(), size).map_err(|e| e.to_string())?;
        for (op, us) in ops.iter().zip(row) {
            check(reported.get(*op) == us * 1_000, format!("{op:?} at {size}: {} ns", reported.get(*op)))?;
            check(probed.get(*op) == us * 1_000, format!("probe {op:?} at {size}"))?;
        }
    }
    // pin + unpin outweighs touch at 64 KB
    let big = report.row(65536).unwrap().overheads;
    check(big.pin_ns + big.unpin_ns > big.touch_ns, "pin+unpin <= touch at 64 KB")?;
    Ok("5 ops x 8 sizes".into())
}

fn c3_timeout_laws() -> Outcome {
    let base = "sizes = 16384\niterations = 20\ntimeout_ns = 1000000\nseed = 7\n";
    let per_iter = |text: String| -> Result<(u64, u64), String> {
        let r = run(&text)?;
        let row = &r.rows[0];
        Ok((row.timeouts, row.iterations))
    };
    let (tap, n) = per_iter(format!("{base}fault_site = src\npolicy = touch_a_page\n"))?;
    check(tap == 4 * n, format!("TouchAPage src: {tap} timeouts over {n}"))?;
    let (ta, _) = per_iter(format!("{base}fault_site = src\npolicy = touch_ahead\n"))?;
    check(ta == n, format!("TouchAhead src: {ta} timeouts over {n}"))?;
    let (both, _) = per_iter(format!("{base}fault_site = both\npolicy = touch_a_page\n"))?;
    check(both < 4 * n, format!("both sites: {both} timeouts over {n}"))?;
    // Single transfers, no averaging
    let single = |site: &str| per_iter(format!("sizes = 16384\niterations = 1\ncold_runs = 0\nfault_site = {site}\n"));
    check(single("src")?.0 == 4, "single src transfer")?;
    check(single("both")?.0 < 4, "single both transfer")?;
    Ok(format!("per transfer: TouchAPage 4, TouchAhead 1, both {:.2}", both as f64 / n as f64))
}

fn c4_src_ratio() -> Outcome {
    let mut notes = Vec::new();
    for size in [16384u64, 32768] {
        let mean = |p: &str| -> Result<f64, String> {
            Ok(run(&format!("sizes = {size}\nfault_site = src\ntimeout_ns = 1000000\npolicy = {p}\n"))?.rows[0].mean_us())
        };
        let (a, b) = (mean("touch_a_page")?, mean("touch_ahead")?);
        let ratio = a / b;
        check((3.0..=4.2).contains(&ratio), format!("{size} B ratio {ratio:.3} ({a:.1} / {b:.1} us)"))?;
        notes.push(format!("{}K {ratio:.2}x", size / 1024));
    }
    Ok(notes.join(", "))
}

fn c5_dst_structure() -> Outcome {
    let r = |p: &str| run(&format!("sizes = 16384\nfault_site = dst\npolicy = {p}\n"));
    let (tap, ta) = (r("touch_a_page")?, r("touch_ahead")?);
    let (tap, ta) = (&tap.rows[0], &ta.rows[0]);
    let n = tap.iterations;
    check(ta.handler_invocations == n, format!("TouchAhead page-ins {} over {n}", ta.handler_invocations))?;
    check(tap.handler_invocations == 4 * n, format!("TouchAPage page-ins {} over {n}", tap.handler_invocations))?;
    check(ta.mean_ns < tap.mean_ns, format!("means {} vs {}", ta.mean_us(), tap.mean_us()))?;
    for row in [tap, ta] {
        check(row.rapf_sent <= row.fifo_pushes, "rapf_sent > fifo_pushes")?;
    }
    Ok(format!("page-ins 1 vs 4, {:.3} < {:.3} us", ta.mean_us(), tap.mean_us()))
}

fn c6_timeout_monotonic() -> Outcome {
    let cfg = scenario("fault_site = src\n[sweep]\ntimeouts_ns = 25000000, 2500000, 1000000\n");
    let reports = run_sweep(&cfg, SweepAxis::Timeouts).map_err(|e| e.to_string())?;
    for &size in &COST_SIZES {
        let means: Vec<u64> = reports.iter().map(|r| r.row(size).unwrap().mean_ns).collect();
        check(means.windows(2).all(|w| w[0] > w[1]), format!("{size} B means {means:?}"))?;
    }
    Ok("8 sizes strictly decreasing".into())
}

fn c7_codecs() -> Outcome {
    // Netlink: every field at 0, max and both alternating patterns.
    let mut n = 0;
    for src in [0u32, 0x3F_FFFF, 0x15_5555, 0x2A_AAAA] {
        for trid in [0u16, 0x3FFF, 0x1555, 0x2AAA] {
            for seq in [0u16, 0x3FFF, 0x1555, 0x2AAA] {
                for iova in [0u32, u32::MAX, 0x5555_5555, 0xAAAA_AAAA] {
                    for pdid in [0u16, 0xFFFF, 0x5555, 0xAAAA] {
                        for rw in [false, true] {
                            let m = NetlinkPageFaultMsg { src_id: src, trid, seq, iova, pdid, rw };
                            let text = m.encode().map_err(|e| e.to_string())?;
                            check(text.len() == 27, "netlink length")?;
                            check(NetlinkPageFaultMsg::decode(&text) == Ok(m), format!("netlink {m:?}"))?;
                            n += 1;
                        }
                    }
                }
            }
        }
    }
    // FIFO entry through the two-phase read.
    let mut f_n = 0;
    for src in [0u32, 0x3F_FFFF, 0x15_5555, 0x2A_AAAA] {
        for trid in [0u16, 0x3FFF, 0x1555, 0x2AAA] {
            for seq in [0u16, 0x3FFF, 0x1555, 0x2AAA] {
                for pdid in [0u16, 0xFFFF, 0x5555, 0xAAAA] {
                    for iova in [0u32, u32::MAX, 0x5555_5555, 0xAAAA_AAAA] {
                        for exa_ack in [0u8, 3, 1, 2] {
                            let e = FaultFifoEntry { src_id: src, trid, seq, pdid, iova, exa_ack };
                            let w = e.encode().map_err(|e| e.to_string())?;
                            check(FaultFifoEntry::decode(w) == Ok(e), format!("fifo words {e:?}"))?;
                            let mut fifo = FaultFifo::new(1);
                            fifo.push(e).map_err(|e| e.to_string())?;
                            let a = fifo.read64(FifoHalf::First).map_err(|e| e.to_string())?;
                            let b = fifo.read64(FifoHalf::Second).map_err(|e| e.to_string())?;
                            check(FaultFifoEntry::from_halves(a, b) == Ok(e), format!("fifo halves {e:?}"))?;
                            f_n += 1;
                        }
                    }
                }
            }
        }
    }
    let seqs = fifo_fsm_against_oracle()?;
    Ok(format!("{n} netlink, {f_n} fifo entries, {seqs} FSM sequences"))
}

/// Two states: 0 = idle, 1 = first half read. Returns (next state, popped, ok).
fn fsm_oracle(state: u8, op: u8, empty: bool) -> (u8, bool, bool) {
    match (state, op, empty) {
        (s, 0, _) => (s, false, true),
        (s, _, true) => (s, false, false),
        (_, 1, false) => (1, false, true),
        (1, 2, false) => (0, true, true),
        (0, 2, false) => (0, false, false),
        _ => unreachable!(),
    }
}

fn fifo_fsm_against_oracle() -> Result<u64, String> {
    let mut count = 0;
    for len in 1..=8u32 {
        for code in 0..3u32.pow(len) {
            let mut fifo = FaultFifo::new(16);
            let (mut state, mut depth) = (0u8, 0usize);
            let mut c = code;
            for step in 0..len {
                let op = (c % 3) as u8;
                c /= 3;
                let (next, pops, ok) = fsm_oracle(state, op, depth == 0);
                let got = match op {
                    0 => fifo.push(FaultFifoEntry { iova: step, ..Default::default() }).is_ok(),
                    1 => fifo.read64(FifoHalf::First).is_ok(),
                    _ => fifo.read64(FifoHalf::Second).is_ok(),
                };
                if op == 0 {
                    depth += 1;
                }
                if pops {
                    depth -= 1;
                }
                state = next;
                check(got == ok && fifo.len() == depth, format!("sequence {code} of length {len}, step {step}"))?;
            }
            count += 1;
        }
    }
    Ok(count)
}

fn c8_smmu() -> Outcome {
    let stream = StreamId::encode(StreamFields { tbu: 3, master_id: 5, axi_id: 9 }).map_err(|e| e.to_string())?;
    let setup = |flags: SctlrFlags, regions: &[(u64, u64, InitialState)]| {
        let mut mem = MemoryManager::default();
        mem.add_space(AddressSpace::new(1, 0));
        for &(va, len, init) in regions {
            let (s, f, c) = mem.parts(1, 0).unwrap();
            s.map_region(VirtAddr(va), len, &FaultInjectorConfig { initial_state: init, ..Default::default() }, f, c).unwrap();
        }
        let mut smmu = Smmu::new(SmmuConfig::default());
        smmu.init_context_bank(0, 1, 0, flags).unwrap();
        (smmu, mem)
    };
    let t = SimTime(0);
    let err = |e: pfsim::smmu::SmmuError| e.to_string();

    // MULTI: two faults before the handler reads FSR -> 1 record, MULTI set,
    // FAR of the first, one interrupt.
    let hupcf = SctlrFlags { hupcf: true, ..Default::default() };
    let (mut smmu, mem) = setup(hupcf, &[(0x40000, 8192, InitialState::NotPresent)]);
    smmu.translate(stream, 0, VirtAddr(0x40000), false, t, &mem).map_err(err)?;
    smmu.translate(stream, 0, VirtAddr(0x41000), true, t, &mem).map_err(err)?;
    let b = smmu.bank(0).map_err(err)?;
    check(b.fault_records == 1 && b.regs.multi && b.regs.far == 0x40000 && !b.regs.wnr, format!("MULTI regs {:?}", b.regs))?;
    check(smmu.drain_irqs() == vec![0], "one irq")?;

    // HUPCF=false: a healthy destination access behind a source fault is
    // terminated without a fault record of its own.
    let (mut smmu, mem) =
        setup(SctlrFlags::default(), &[(0x10000, 4096, InitialState::NotPresent), (0x20000, 4096, InitialState::Present)]);
    let src = smmu.translate(stream, 0, VirtAddr(0x10000), false, t, &mem).map_err(err)?;
    let dst = smmu.translate(stream, 0, VirtAddr(0x20000), true, t, &mem).map_err(err)?;
    check(src == Translation::Terminated { fault: true }, "source fault")?;
    check(dst == Translation::Terminated { fault: false }, format!("collateral {dst:?}"))?;
    let b = smmu.bank(0).map_err(err)?;
    check(b.fault_records == 1 && !b.regs.multi, "collateral is not recorded")?;

    // HUPCF=true: the same healthy access translates.
    let (mut smmu, mem) = setup(hupcf, &[(0x10000, 4096, InitialState::NotPresent), (0x20000, 4096, InitialState::Present)]);
    smmu.translate(stream, 0, VirtAddr(0x10000), false, t, &mem).map_err(err)?;
    let dst = smmu.translate(stream, 0, VirtAddr(0x20000), true, t, &mem).map_err(err)?;
    check(matches!(dst, Translation::Translated { .. }), format!("isolated {dst:?}"))?;

    // Stall, page in, resume(Retry) -> translated; the token is consumed.
    let stall = SctlrFlags { cfcfg: FaultConfig::Stall, hupcf: true, ..Default::default() };
    let (mut smmu, mut mem) = setup(stall, &[(0x8000, 4096, InitialState::NotPresent)]);
    let Translation::Stalled { token } = smmu.translate(stream, 0, VirtAddr(0x8000), true, t, &mem).map_err(err)? else {
        return Err("expected stall".into());
    };
    check(smmu.bank(0).map_err(err)?.stalled_tokens() == vec![token], "one parked access")?;
    smmu.read_and_clear_fault(0).map_err(err)?;
    {
        let (s, f, c) = mem.parts(1, 0).unwrap();
        s.touch(VirtAddr(0x8000), true, f, c).map_err(|e| e.to_string())?;
    }
    let r = smmu.resume(0, token, ResumeAction::Retry, SimTime(10), &mem).map_err(err)?;
    check(matches!(r, Translation::Translated { .. }), format!("retry {r:?}"))?;
    check(smmu.bank(0).map_err(err)?.stalled_tokens().is_empty(), "token consumed")?;
    check(smmu.bank(0).map_err(err)?.fault_records == 1, "one record")?;

    // Whole-system reproduction: with HUPCF clear and a slow interrupt, the
    // 16 packets of the healthy source page land while the other source page
    // holds the fault registers, so every one is refused at a resident
    // destination page: 16 NACKs, one FIFO entry, 15 duplicates.
    let mut cfg = SimConfig::default();
    cfg.sctlr.hupcf = false;
    cfg.smmu.irq_latency_ns = 50_000;
    let mut sim = Simulation::new(cfg, 1);
    sim.add_process(1, 0).map_err(|e| e.to_string())?;
    let present = FaultInjectorConfig { initial_state: InitialState::Present, ..Default::default() };
    sim.with_space(0, 1, 0, |s, f, c| {
        s.map_region(VirtAddr(0x100000), 8192, &present, f, c)?;
        s.map_region(VirtAddr(0x200000), 8192, &present, f, c)?;
        s.evict_region(VirtAddr(0x101000), 4096, 1.0, &mut rand::thread_rng())
    })
    .map_err(|e| e.to_string())?;
    let req = TransferRequest { pdid: 1, proc_idx: 0, channel: 0, src_va: 0x100000, dst_va: 0x200000, len: 8192, dst_node: 0 };
    let id = sim.submit_transfer(0, req).map_err(|e| e.to_string())?;
    sim.run_until_done(0, id, SimTime(1_000_000_000)).map_err(|e| e.to_string())?;
    let m = &sim.metrics;
    let got = [m.get(Counter::PacketsWithheld), m.get(Counter::FifoPushes), m.get(Counter::FifoDups)];
    check(got == [16, 1, 15], format!("withheld/pushes/dups {got:?}"))?;
    check(m.get(Counter::NackCount) >= 16, "collateral NACKs")?;
    let dst_pages_faulted_by_collateral = m.get(Counter::FifoPushes) > 0;
    check(dst_pages_faulted_by_collateral, "collateral did not reach the FIFO")?;
    Ok("MULTI, collateral, isolation, stall-retry, system reproduction".into())
}

fn c9_soak() -> Outcome {
    let a = soak(2024, 1_000).map_err(|e| e.to_string())?;
    check(a.len() == 1_000, "case count")?;
    let b = soak(2024, 1_000).map_err(|e| e.to_string())?;
    check(soak_csv(&a) == soak_csv(&b), "soak CSV differs between reruns")?;
    let text = "sizes = 4096, 16384\niterations = 30\nfault_site = both\n[thp]\nenabled = true\n";
    let r1 = to_csv(&[run(text)?]);
    let r2 = to_csv(&[run(text)?]);
    check(r1 == r2, "scenario CSV differs between reruns")?;
    let faulted = a.iter().filter(|o| o.case.fault_site != FaultSite::None).count();
    let thp = a.iter().filter(|o| o.thp_invalidations > 0).count();
    Ok(format!("1000 cases ({faulted} with injected faults, {thp} with THP invalidations), reruns identical"))
}

fn byte_scan(dst_va: u64, len: u64) -> Vec<(u64, u64)> {
    let mut out: Vec<(u64, u64)> = Vec::new();
    for off in 0..len {
        if off == 0 || (dst_va + off) % 16384 == 0 {
            out.push((off, 0));
        }
        out.last_mut().unwrap().1 += 1;
    }
    out
}

fn c10_segmentation() -> Outcome {
    let table: [(u64, u64, usize); 8] = [
        (0x10000, 32768, 2),
        (0x10000, 65536, 4),
        (0x10000, 16384, 1),
        (0x10000, 16, 1),
        (0x10001, 16384, 2),
        (0x13FFF, 2, 2),
        (0x12000, 32768, 3),
        (0x10100, 65536, 5),
    ];
    for (va, len, n) in table {
        let got = segment(va, len);
        check(got.len() == n, format!("{len} B at {va:#x}: {} transactions", got.len()))?;
        let spans: Vec<(u64, u64)> = got.iter().map(|s| (s.offset, s.len)).collect();
        check(spans == byte_scan(va, len), format!("{len} B at {va:#x} vs byte scan"))?;
    }
    let mut cases = 0;
    for va in [0u64, 1, 255, 4095, 8191, 16383, 16385, 0x7FFF] {
        for len in [1u64, 255, 256, 4097, 16383, 16384, 16385, 40000, 65536] {
            let spans: Vec<(u64, u64)> = segment(va, len).iter().map(|s| (s.offset, s.len)).collect();
            check(spans == byte_scan(va, len), format!("{len} B at {va:#x} vs byte scan"))?;
            cases += 1;
        }
    }
    Ok(format!("{} table rows, {cases} unaligned cases", table.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("calibration anchor", c1_calibration),
        ("cost-model fidelity", c2_cost_table),
        ("timeout-count laws", c3_timeout_laws),
        ("source-fault latency ratio", c4_src_ratio),
        ("destination-fault structure", c5_dst_structure),
        ("timeout sweep monotonicity", c6_timeout_monotonic),
        ("codec suites", c7_codecs),
        ("smmu semantics", c8_smmu),
        ("integrity and liveness soak", c9_soak),
        ("segmentation", c10_segmentation),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(note) => println!("criterion {:>2} PASS  {name} ({note}) [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
