//! Constant-rate HTTP load generation against the blob-server edge app.
//!
//! A run issues `rate × duration` requests on a fixed open-loop schedule and
//! records one [`RequestSample`] per request. The virtual-clock engine pushes
//! real request bytes through the GTP-U tunnel and EPC demux over emulated
//! radio links; the wall-clock engine does the same over UDP sockets and
//! real time.

mod corpus;
mod engine;
mod http;
mod live;
mod report;
mod scenario;
mod server;

use std::io;
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epc::CoreError;
use crate::fabric::FabricError;
use crate::radio::{
    self, LinkProfile, REFERENCE_FIRST_REQUEST_MS, REFERENCE_MEAN_RTT_MS, REFERENCE_THROUGHPUT,
};

pub use corpus::{
    route_body_len, BlobCorpus, BLOB_10M_LEN, BLOB_1M_LEN, DEFAULT_CORPUS_SEED, ROUTES,
};
pub use engine::{run_virtual, VirtualStack, BENCH_SUBSCRIBER, BLOB_SERVER};
pub use http::{
    build_request, parse_request, parse_response_head, response_head, RequestHead, ResponseHead,
};
pub use live::{run_wall, LiveStack};
pub use report::{
    compute_report, emit_plot, emit_series, series_csv, series_svg, summary_table, BenchReport,
    RequestSample, CSV_HEADER,
};
pub use scenario::{BenchScenario, TARGET_HOST};
pub use server::{serve_blobs, BlobServer};

/// Requests still outstanding this long after issue are recorded as failed.
pub const REQUEST_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("target {0} is not resolvable through the edge fabric")]
    UnresolvableTarget(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("no samples to report on")]
    NoSamples,
    #[error("all {0} requests failed")]
    AllFailed(usize),
    #[error("address {0} is already in use")]
    PortInUse(SocketAddr),
    #[error("connection policy {0} is not supported by the wall-clock engine")]
    UnsupportedPolicy(ConnectionPolicy),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How radio connection setup is charged to requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConnectionPolicy {
    /// One radio connection for the whole run: the first request pays
    /// `setup_cost`, requests issued while it is being set up wait for it.
    #[default]
    Shared,
    /// One keep-alive connection per concurrent in-flight slot; a request
    /// that finds no idle slot opens a new one and pays `setup_cost`.
    PerSlot,
}

impl std::fmt::Display for ConnectionPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConnectionPolicy::Shared => "shared",
            ConnectionPolicy::PerSlot => "per-slot",
        })
    }
}

impl FromStr for ConnectionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shared" => Ok(ConnectionPolicy::Shared),
            "per-slot" => Ok(ConnectionPolicy::PerSlot),
            other => Err(format!(
                "unknown connection policy {other:?} (shared|per-slot)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub policy: ConnectionPolicy,
    pub timeout: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            policy: ConnectionPolicy::Shared,
            timeout: REQUEST_TIMEOUT,
        }
    }
}

/// The link profile fitted to the reference measurements (20.6 ms mean RTT,
/// 7.52 MB/s, 65.6 ms first request). Computed once per process.
pub fn calibrated_profile() -> LinkProfile {
    static PROFILE: OnceLock<LinkProfile> = OnceLock::new();
    *PROFILE.get_or_init(|| {
        radio::calibrate(
            REFERENCE_MEAN_RTT_MS,
            REFERENCE_THROUGHPUT,
            REFERENCE_FIRST_REQUEST_MS,
        )
        .expect("reference targets are feasible")
    })
}
