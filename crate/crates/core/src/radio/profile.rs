use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("link profile field `{field}` out of range: {value}")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("reading link profile: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing link profile: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Radio link model parameters. Times are milliseconds, bandwidth is bytes
/// per second (1 MB/s = 10^6 B/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkProfile {
    pub one_way_delay: f64,
    pub bandwidth: f64,
    pub jitter_stddev: f64,
    pub loss_prob: f64,
    /// Paid once when a connection is established over the link.
    pub setup_cost: f64,
    pub seed: u64,
}

impl Default for LinkProfile {
    fn default() -> Self {
        LinkProfile {
            one_way_delay: 0.0,
            bandwidth: 1e9,
            jitter_stddev: 0.0,
            loss_prob: 0.0,
            setup_cost: 0.0,
            seed: 1,
        }
    }
}

impl LinkProfile {
    /// WiFi comparison link: 38.65 MB/s with a short, quiet path.
    pub fn wifi_baseline() -> LinkProfile {
        LinkProfile {
            one_way_delay: 2.5,
            bandwidth: 38_650_000.0,
            jitter_stddev: 0.5,
            loss_prob: 0.0,
            setup_cost: 0.0,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let check = |field: &'static str, value: f64, ok: bool| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(ProfileError::OutOfRange { field, value })
            }
        };
        check(
            "one_way_delay",
            self.one_way_delay,
            self.one_way_delay >= 0.0,
        )?;
        check("bandwidth", self.bandwidth, self.bandwidth > 0.0)?;
        check(
            "jitter_stddev",
            self.jitter_stddev,
            self.jitter_stddev >= 0.0,
        )?;
        check(
            "loss_prob",
            self.loss_prob,
            (0.0..=1.0).contains(&self.loss_prob),
        )?;
        check("setup_cost", self.setup_cost, self.setup_cost >= 0.0)?;
        Ok(())
    }

    pub fn setup_duration(&self) -> Duration {
        Duration::from_secs_f64(self.setup_cost / 1e3)
    }

    /// Time to clock `bytes` onto the link.
    pub fn serialization(&self, bytes: usize) -> Duration {
        Duration::from_nanos((bytes as f64 * 1e9 / self.bandwidth).round() as u64)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    pub fn from_toml(text: &str) -> Result<LinkProfile, ProfileError> {
        let p: LinkProfile = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<LinkProfile, ProfileError> {
        LinkProfile::from_toml(&std::fs::read_to_string(path)?)
    }
}
