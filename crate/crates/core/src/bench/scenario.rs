use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::corpus::{BLOB_10M_LEN, BLOB_1M_LEN};
use super::BenchError;
use crate::radio::LinkProfile;

pub const TARGET_HOST: &str = "blob-server.edge.local";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchScenario {
    pub name: String,
    pub target_url: String,
    /// Requests per second.
    pub rate: u32,
    /// Seconds.
    pub duration: u32,
    pub expected_body_bytes: u64,
    /// Link to use instead of the run's profile (the WiFi baseline).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<LinkProfile>,
}

impl BenchScenario {
    fn standard(name: &str, path: &str, body: usize) -> BenchScenario {
        BenchScenario {
            name: name.to_string(),
            target_url: format!("http://{TARGET_HOST}{path}"),
            rate: 50,
            duration: 5,
            expected_body_bytes: body as u64,
            profile: None,
        }
    }

    pub fn empty() -> BenchScenario {
        Self::standard("empty", "/empty", 0)
    }

    pub fn blob1m() -> BenchScenario {
        Self::standard("blob1m", "/blob1m", BLOB_1M_LEN)
    }

    pub fn blob10m() -> BenchScenario {
        Self::standard("blob10m", "/blob10m", BLOB_10M_LEN)
    }

    /// The 10 MiB run over a WiFi link instead of the radio.
    pub fn baseline() -> BenchScenario {
        BenchScenario {
            name: "baseline".into(),
            profile: Some(LinkProfile::wifi_baseline()),
            ..Self::standard("baseline", "/blob10m", BLOB_10M_LEN)
        }
    }

    /// The four standard scenarios, in table order.
    pub fn all() -> Vec<BenchScenario> {
        vec![
            Self::empty(),
            Self::blob1m(),
            Self::blob10m(),
            Self::baseline(),
        ]
    }

    pub fn by_name(name: &str) -> Option<BenchScenario> {
        Self::all().into_iter().find(|s| s.name == name)
    }

    pub fn total_requests(&self) -> usize {
        self.rate as usize * self.duration as usize
    }

    /// Issue offset of request `i`: chunk `k = i / rate` starts at `k`
    /// seconds and its `rate` requests are evenly spaced within that second.
    pub fn issue_offset(&self, i: usize) -> Duration {
        let rate = u64::from(self.rate);
        let (k, j) = (i as u64 / rate, i as u64 % rate);
        Duration::from_nanos(k * 1_000_000_000 + j * 1_000_000_000 / rate)
    }

    /// Splits `target_url` into host and path.
    pub fn target(&self) -> Result<(String, String), BenchError> {
        let rest = self
            .target_url
            .strip_prefix("http://")
            .ok_or_else(|| BenchError::UnresolvableTarget(self.target_url.clone()))?;
        let (host, path) = match rest.find('/') {
            Some(i) => (&rest[..i], &rest[i..]),
            None => (rest, "/"),
        };
        if host.is_empty() {
            return Err(BenchError::UnresolvableTarget(self.target_url.clone()));
        }
        Ok((host.to_string(), path.to_string()))
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.rate == 0 || self.duration == 0 {
            return Err(BenchError::InvalidScenario(format!(
                "{}: rate and duration must be positive",
                self.name
            )));
        }
        self.target().map(|_| ())
    }
}
