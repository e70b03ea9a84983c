//! Radio link emulation standing in for the over-the-air hop.
//!
//! The model is a per-direction FIFO link with serialization at a fixed
//! bandwidth, propagation delay with Gaussian jitter, random loss and a
//! one-off connection setup cost. Virtual-clock mode drives it from a
//! [`Simulator`]; live mode wraps it in a [`Shaper`] actor.

mod calibrate;
mod link;
mod profile;
mod shaper;
mod sim;
mod time;

pub use calibrate::{
    calibrate, calibrate_targets, probe_rtts, CalibrationError, CalibrationTargets, ProbeWorkload,
    REFERENCE_FIRST_REQUEST_MS, REFERENCE_MEAN_RTT_MS, REFERENCE_P99_RTT_MS, REFERENCE_THROUGHPUT,
};
pub use link::{Direction, Link, ScheduledDelivery};
pub use profile::{LinkProfile, ProfileError};
pub use shaper::{Shaper, ShaperHandle};
pub use sim::Simulator;
pub use time::SimTime;

/// Which clock drives a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    Virtual,
    Wall,
}

impl std::str::FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "virtual" => Ok(ClockMode::Virtual),
            "wall" => Ok(ClockMode::Wall),
            other => Err(format!("unknown clock mode {other:?} (virtual|wall)")),
        }
    }
}
