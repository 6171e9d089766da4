//! Fits the per-packet wire cost to a target no-fault 16 B round trip.

use super::config::{FaultSite, Mode, ScenarioConfig, Strategy};
use super::runner::run_size;
use super::BenchError;

pub const ANCHOR_SIZE: u64 = 16;
pub const DEFAULT_TARGET_US: f64 = 4.0;
pub const TOLERANCE: f64 = 0.01;
const PROBE_ITERATIONS: u64 = 1_000;
const PROBE_STEP_NS: u64 = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationRecord {
    pub target_us: f64,
    pub per_packet_ns: u64,
    pub achieved_us: f64,
    pub knobs: Vec<(String, String)>,
}

/// Ideal-mode, no-fault mean for the anchor size.
pub fn anchor_mean_us(base: &ScenarioConfig, per_packet_ns: u64, iterations: u64) -> Result<f64, BenchError> {
    let mut c = base.clone();
    c.sizes = vec![ANCHOR_SIZE];
    c.mode = Mode::Ideal;
    c.fault_site = FaultSite::None;
    c.strategy = Strategy::FaultHandled;
    c.iterations = Some(iterations);
    c.sim.wire.per_packet_ns = per_packet_ns;
    c.sim.thp = None;
    c.validate()?;
    Ok(run_size(&c, ANCHOR_SIZE)?.mean_ns as f64 / 1_000.0)
}

/// Two-point linear solve for `per_packet_ns`, then a check run. Everything
/// else in `base` is kept.
pub fn calibrate(base: &ScenarioConfig, target_us: f64) -> Result<(ScenarioConfig, CalibrationRecord), BenchError> {
    if !(target_us.is_finite() && target_us > 0.0) {
        return Err(BenchError::Unsatisfiable(format!("target {target_us} us is not a positive time")));
    }
    let m0 = anchor_mean_us(base, 0, PROBE_ITERATIONS)?;
    let m1 = anchor_mean_us(base, PROBE_STEP_NS, PROBE_ITERATIONS)?;
    let slope = (m1 - m0) / PROBE_STEP_NS as f64;
    if slope <= 0.0 {
        return Err(BenchError::Unsatisfiable("round trip does not depend on per_packet_ns".into()));
    }
    let solved = (target_us - m0) / slope;
    if solved < -0.5 {
        return Err(BenchError::Unsatisfiable(format!(
            "fixed costs alone give {m0:.3} us, above the {target_us} us target; per_packet_ns would be {solved:.0}"
        )));
    }
    let per_packet_ns = solved.round().max(0.0) as u64;
    let achieved_us = anchor_mean_us(base, per_packet_ns, PROBE_ITERATIONS)?;
    if (achieved_us - target_us).abs() > TOLERANCE * target_us {
        return Err(BenchError::Unsatisfiable(format!(
            "best fit {per_packet_ns} ns gives {achieved_us:.3} us, outside 1% of {target_us} us"
        )));
    }
    let mut out = base.clone();
    out.sim.wire.per_packet_ns = per_packet_ns;
    let knobs = out.knobs().into_iter().map(|(s, k, v)| (format!("{s}.{k}"), v)).collect();
    Ok((out, CalibrationRecord { target_us, per_packet_ns, achieved_us, knobs }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_already_calibrated() {
        let base = ScenarioConfig::default();
        let (c, rec) = calibrate(&base, DEFAULT_TARGET_US).unwrap();
        assert_eq!(rec.per_packet_ns, base.sim.wire.per_packet_ns);
        assert_eq!(c, base);
    }

    #[test]
    fn one_hop_costs_two_hop_latencies() {
        let mut base = ScenarioConfig::default();
        let (_, zero) = calibrate(&base, 5.0).unwrap();
        base.sim.wire.hops = 1;
        let (_, one) = calibrate(&base, 5.0).unwrap();
        assert_eq!(zero.per_packet_ns - one.per_packet_ns, 2 * base.sim.wire.per_hop_ns);
    }

    #[test]
    fn unreachable_target() {
        assert!(matches!(calibrate(&ScenarioConfig::default(), 0.5), Err(BenchError::Unsatisfiable(_))));
        assert!(matches!(calibrate(&ScenarioConfig::default(), -1.0), Err(BenchError::Unsatisfiable(_))));
    }
}
