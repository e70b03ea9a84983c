use std::fs;
use std::io;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Ports;

pub const STATE_FILE: &str = "core.json";
pub const SUBSCRIBERS_FILE: &str = "subscribers.toml";
pub const CORE_LOG: &str = "core.log";

/// Written by a running core once all its listeners are bound; removed on
/// shutdown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreState {
    pub pid: u32,
    pub bind: Ipv4Addr,
    pub ports: Ports,
    pub started_at_ms: u64,
}

pub fn state_path(dir: &Path) -> PathBuf {
    dir.join(STATE_FILE)
}

pub fn load(dir: &Path) -> Option<CoreState> {
    let text = fs::read_to_string(state_path(dir)).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn save(dir: &Path, state: &CoreState) -> io::Result<()> {
    let tmp = dir.join(format!("{STATE_FILE}.tmp"));
    fs::write(
        &tmp,
        serde_json::to_vec_pretty(state).map_err(io::Error::other)?,
    )?;
    fs::rename(tmp, state_path(dir))
}

pub fn remove(dir: &Path) {
    let _ = fs::remove_file(state_path(dir));
}
