use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::fabric::DEFAULT_READINESS_PATH;

pub const MANIFEST_FILE: &str = "edge.manifest";

/// How a snapshot becomes a runnable bundle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BuildRecipe {
    /// Serve the files under this directory (relative to the repo root).
    StaticSite(String),
    /// Package the repo and run this shell command for each instance.
    Exec(String),
}

impl FromStr for BuildRecipe {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (kind, arg) = s.split_once(char::is_whitespace).unwrap_or((s, ""));
        let arg = arg.trim();
        if arg.is_empty() {
            return Err(format!("build_recipe {s:?} is missing its argument"));
        }
        match kind {
            "static_site" => {
                if Path::new(arg).is_absolute() || arg.split('/').any(|c| c == "..") {
                    return Err(format!(
                        "static_site directory {arg:?} must stay inside the repo"
                    ));
                }
                Ok(BuildRecipe::StaticSite(arg.to_string()))
            }
            "exec" => Ok(BuildRecipe::Exec(arg.to_string())),
            other => Err(format!(
                "unknown build_recipe kind {other:?} (expected static_site or exec)"
            )),
        }
    }
}

impl TryFrom<String> for BuildRecipe {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BuildRecipe> for String {
    fn from(r: BuildRecipe) -> String {
        r.to_string()
    }
}

impl fmt::Display for BuildRecipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildRecipe::StaticSite(dir) => write!(f, "static_site {dir}"),
            BuildRecipe::Exec(cmd) => write!(f, "exec {cmd}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub test_command: String,
    pub build_recipe: BuildRecipe,
    pub replicas: u32,
    pub port: u16,
    /// Run before packaging an `exec` bundle; nonzero exit fails the build.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub build_command: Option<String>,
    #[serde(default = "default_readiness_path")]
    pub readiness_path: String,
}

fn default_readiness_path() -> String {
    DEFAULT_READINESS_PATH.to_string()
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest, PipelineError> {
        let m: Manifest =
            toml::from_str(text).map_err(|e| PipelineError::BadManifest(e.to_string()))?;
        if m.replicas == 0 {
            return Err(PipelineError::BadManifest(
                "replicas must be at least 1".into(),
            ));
        }
        if m.port == 0 {
            return Err(PipelineError::BadManifest("port must be nonzero".into()));
        }
        if !m.readiness_path.starts_with('/') {
            return Err(PipelineError::BadManifest(
                "readiness_path must start with '/'".into(),
            ));
        }
        Ok(m)
    }

    /// Reads `edge.manifest` from a repo root.
    pub fn load(repo_root: &Path) -> Result<Manifest, PipelineError> {
        let path = repo_root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|_| PipelineError::MissingManifest(path.clone()))?;
        Manifest::parse(&text)
    }
}

/// Wall-clock bounds for the stages that run user code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timeouts {
    pub test: Duration,
    pub build: Duration,
    pub readiness: Duration,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts {
            test: Duration::from_secs(120),
            build: Duration::from_secs(300),
            readiness: Duration::from_secs(30),
        }
    }
}
