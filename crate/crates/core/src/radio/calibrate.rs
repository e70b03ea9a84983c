//! Fits a [`LinkProfile`] to measured end-to-end targets.
//!
//! Delay, bandwidth and setup cost follow directly from the targets. Jitter
//! has no closed form once the first-request setup and FIFO ordering are in
//! play, so it is found by bisection over a simulated small-payload run.

use thiserror::Error;

use super::{Direction, Link, LinkProfile, SimTime, Simulator};
use crate::stats;

/// Empty-document row of the reference measurements.
pub const REFERENCE_MEAN_RTT_MS: f64 = 20.6;
pub const REFERENCE_P99_RTT_MS: f64 = 45.9;
pub const REFERENCE_FIRST_REQUEST_MS: f64 = 65.6;
/// 10 MB row throughput.
pub const REFERENCE_THROUGHPUT: f64 = 7_520_000.0;

const SEARCH_REPS: u64 = 21;
const SEARCH_ITERATIONS: usize = 24;
const SEARCH_SEED: u64 = 0x00C0_FFEE;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("infeasible calibration targets: {0}")]
    InfeasibleTargets(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTargets {
    pub mean_rtt_ms: f64,
    pub throughput: f64,
    pub first_request_ms: f64,
    pub p99_rtt_ms: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        CalibrationTargets {
            mean_rtt_ms: REFERENCE_MEAN_RTT_MS,
            throughput: REFERENCE_THROUGHPUT,
            first_request_ms: REFERENCE_FIRST_REQUEST_MS,
            p99_rtt_ms: REFERENCE_P99_RTT_MS,
        }
    }
}

/// Open-loop small-payload request/response run used as the fitting probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeWorkload {
    pub requests: usize,
    pub rate: u32,
    /// Bytes on the uplink per request, tunnel headers included.
    pub request_bytes: usize,
    /// Bytes on the downlink per response, tunnel headers included.
    pub response_bytes: usize,
}

impl Default for ProbeWorkload {
    fn default() -> Self {
        ProbeWorkload {
            requests: 250,
            rate: 50,
            request_bytes: 110,
            response_bytes: 90,
        }
    }
}

enum ProbeEvent {
    Issue(usize),
    Send(usize),
    Serve(usize),
    Done(usize),
}

/// Simulates the probe workload and returns round-trip times in ms, in
/// issue order. Lost requests are omitted. The first request establishes the
/// radio connection and pays `setup_cost`; requests issued meanwhile wait.
pub fn probe_rtts(profile: &LinkProfile, workload: &ProbeWorkload) -> Vec<f64> {
    let mut up = Link::new(*profile, Direction::Uplink);
    let mut down = Link::new(*profile, Direction::Downlink);
    let mut sim = Simulator::new();
    let issue_at = |i: usize| SimTime(i as u64 * 1_000_000_000 / u64::from(workload.rate));
    for i in 0..workload.requests {
        sim.schedule(issue_at(i), ProbeEvent::Issue(i));
    }
    let mut connected_at: Option<SimTime> = None;
    let mut rtts = vec![f64::NAN; workload.requests];
    while let Some((now, ev)) = sim.pop_next() {
        match ev {
            ProbeEvent::Issue(i) => {
                let ready = *connected_at.get_or_insert(now + profile.setup_duration());
                sim.schedule(ready.max(now), ProbeEvent::Send(i));
            }
            ProbeEvent::Send(i) => {
                let d = up.transmit(workload.request_bytes, now);
                if !d.dropped {
                    sim.schedule(d.deliver_at, ProbeEvent::Serve(i));
                }
            }
            ProbeEvent::Serve(i) => {
                let d = down.transmit(workload.response_bytes, now);
                if !d.dropped {
                    sim.schedule(d.deliver_at, ProbeEvent::Done(i));
                }
            }
            ProbeEvent::Done(i) => rtts[i] = (now - issue_at(i)).as_secs_f64() * 1e3,
        }
    }
    rtts.retain(|r| !r.is_nan());
    rtts
}

fn median_p99(base: &LinkProfile, jitter: f64, workload: &ProbeWorkload) -> f64 {
    let p99s: Vec<f64> = (0..SEARCH_REPS)
        .map(|r| {
            let p = LinkProfile {
                jitter_stddev: jitter,
                seed: SEARCH_SEED + r,
                ..*base
            };
            let rtts = stats::sorted(&probe_rtts(&p, workload));
            stats::nearest_rank(&rtts, 0.99)
        })
        .collect();
    stats::median(&p99s)
}

/// Calibrates against the given mean RTT, throughput and first-request
/// latency, fitting jitter to the reference p99.
pub fn calibrate(
    target_mean_rtt_ms: f64,
    target_throughput: f64,
    target_first_request_ms: f64,
) -> Result<LinkProfile, CalibrationError> {
    calibrate_targets(
        &CalibrationTargets {
            mean_rtt_ms: target_mean_rtt_ms,
            throughput: target_throughput,
            first_request_ms: target_first_request_ms,
            p99_rtt_ms: REFERENCE_P99_RTT_MS,
        },
        &ProbeWorkload::default(),
    )
}

pub fn calibrate_targets(
    targets: &CalibrationTargets,
    workload: &ProbeWorkload,
) -> Result<LinkProfile, CalibrationError> {
    let infeasible = |msg: String| Err(CalibrationError::InfeasibleTargets(msg));
    for (name, v) in [
        ("mean RTT", targets.mean_rtt_ms),
        ("throughput", targets.throughput),
        ("first request", targets.first_request_ms),
        ("p99 RTT", targets.p99_rtt_ms),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return infeasible(format!("{name} target must be positive, got {v}"));
        }
    }
    if targets.first_request_ms < targets.mean_rtt_ms {
        return infeasible(format!(
            "first-request target {}ms is below the mean RTT {}ms",
            targets.first_request_ms, targets.mean_rtt_ms
        ));
    }
    if targets.p99_rtt_ms < targets.mean_rtt_ms {
        return infeasible(format!(
            "p99 target {}ms is below the mean RTT {}ms",
            targets.p99_rtt_ms, targets.mean_rtt_ms
        ));
    }
    let serialization_ms =
        (workload.request_bytes + workload.response_bytes) as f64 / targets.throughput * 1e3;
    if serialization_ms >= targets.mean_rtt_ms {
        return infeasible(format!(
            "small-payload serialization {serialization_ms:.3}ms alone exceeds the mean RTT"
        ));
    }

    let base = LinkProfile {
        one_way_delay: (targets.mean_rtt_ms - serialization_ms) / 2.0,
        bandwidth: targets.throughput,
        jitter_stddev: 0.0,
        loss_prob: 0.0,
        setup_cost: targets.first_request_ms - targets.mean_rtt_ms,
        seed: 1,
    };

    let goal = targets.p99_rtt_ms;
    let f = |jitter: f64| median_p99(&base, jitter, workload);
    if f(0.0) >= goal {
        return Ok(base);
    }
    let mut lo = 0.0;
    let mut hi = goal.max(1.0);
    let mut grow = 0;
    while f(hi) < goal {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 8 {
            return infeasible(format!("no jitter reaches a p99 of {goal}ms"));
        }
    }
    for _ in 0..SEARCH_ITERATIONS {
        let mid = (lo + hi) / 2.0;
        if f(mid) < goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(LinkProfile {
        jitter_stddev: (lo + hi) / 2.0,
        ..base
    })
}
