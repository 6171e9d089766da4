use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pfsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfsim")).args(args).output().expect("spawn pfsim")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn run_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.cfg", "sizes = 16, 4096\niterations = 5\n");
    let out = dir.path().join("r.csv");
    let o = pfsim(&["run", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "size_bytes,strategy,policy,fault_site,timeout_ns,mean_us,timeouts,handler_invocations,rapf_sent,driver_ns,seed");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("16,fault_handled,touch_a_page,none,1000000,"));
    assert!(lines[1].ends_with(",3"));
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.cfg", "sizes = 16384\niterations = 4\nfault_site = dst\n");
    let a = pfsim(&["run", "--config", &cfg]);
    let b = pfsim(&["run", "--config", &cfg]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn summary_format_lists_knobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.cfg", "sizes = 64\niterations = 2\n");
    let o = pfsim(&["run", "--config", &cfg, "--format", "summary"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("# wire.per_packet_ns = 2680"));
    assert!(text.contains("per-buffer overheads"));
}

#[test]
fn sweep_emits_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.cfg", "sizes = 4096\niterations = 2\nfault_site = src\n");
    let o = pfsim(&["sweep", "--config", &cfg, "--axis", "timeouts"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let timeouts: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(4).unwrap()).collect();
    assert_eq!(timeouts, vec!["25000000", "2500000", "1000000"]);
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad_key = write(dir.path(), "k.cfg", "[wire]\nbogus = 1\n");
    let o = pfsim(&["run", "--config", &bad_key]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    let ideal_fault = write(dir.path(), "i.cfg", "mode = ideal\nfault_site = src\n");
    assert_eq!(pfsim(&["run", "--config", &ideal_fault]).status.code(), Some(1));
    assert_eq!(pfsim(&["run", "--config", "/nonexistent/x.cfg"]).status.code(), Some(1));
    assert_eq!(pfsim(&["run"]).status.code(), Some(1));
    assert_eq!(pfsim(&["calibrate", "--target-16b-us", "0.2"]).status.code(), Some(1));
}

#[test]
fn stuck_transfer_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // The fault handler would only run after the liveness budget is spent.
    let cfg = write(
        dir.path(),
        "s.cfg",
        "sizes = 4096\niterations = 1\ncold_runs = 0\nfault_site = src\n[driver]\ntasklet_delay_ns = 20_000_000_000\n",
    );
    let o = pfsim(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invariant"));
}

#[test]
fn calibrate_prints_a_usable_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cal.cfg");
    let o = pfsim(&["calibrate", "--target-16b-us", "5.0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("per_packet_ns = 3680"));
    let run = write(dir.path(), "r.cfg", &text.replace("iterations = 10000", "iterations = 3"));
    assert!(pfsim(&["run", "--config", &run]).status.success());
}

#[test]
fn help_exits_0() {
    assert!(pfsim(&["--help"]).status.success());
}
