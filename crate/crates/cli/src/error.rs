use std::io;
use std::net::SocketAddr;

use edgestack::bench::BenchError;
use edgestack::epc::CoreError;
use edgestack::pipeline::PipelineError;
use edgestack::radio::ProfileError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config values or arguments; exit code 2.
    #[error("{0}")]
    Usage(String),
    #[error("address {0} is already in use")]
    PortInUse(SocketAddr),
    #[error("core is not running (no live state under {0})")]
    NotRunning(String),
    /// An error reported by the running core.
    #[error("{0}")]
    Remote(String),
    #[error("deployment failed at stage {stage}: {reason}")]
    DeployFailed { stage: String, reason: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
