//! Build stage: turns a tested snapshot into a deterministic tar bundle.
//!
//! The bundle holds a `bundle.toml` describing how to run it, followed by
//! the payload files under `files/`. Headers carry no timestamps or owner
//! names, so the same snapshot always yields byte-identical bundles and
//! therefore the same artifact id.

use std::fs;
use std::io::Read;
use std::os::unix::fs::PermissionsExt;
use std::path::{Component, Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::manifest::{BuildRecipe, Manifest};
use super::shell::{run_shell, search_path};
use super::snapshot::included_files;
use super::store::content_id;
use super::PipelineError;

const SPEC_ENTRY: &str = "bundle.toml";
const FILES_PREFIX: &str = "files/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleKind {
    Static,
    Exec,
}

/// Run instructions packed with the payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleSpec {
    pub app: String,
    pub kind: BundleKind,
    /// Shell command for `exec` bundles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    pub port: u16,
    pub readiness_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildArtifact {
    /// SHA-256 of `payload`.
    pub artifact_id: String,
    pub app: String,
    pub version: String,
    pub spec: BundleSpec,
    pub payload: Vec<u8>,
}

/// Short version tag derived from an artifact id.
pub fn version_tag(artifact_id: &str) -> String {
    format!("v-{}", &artifact_id[..12.min(artifact_id.len())])
}

fn append(
    builder: &mut tar::Builder<Vec<u8>>,
    path: &str,
    data: &[u8],
    mode: u32,
) -> std::io::Result<()> {
    let mut header = tar::Header::new_ustar();
    header.set_size(data.len() as u64);
    header.set_mode(mode);
    header.set_mtime(0);
    header.set_uid(0);
    header.set_gid(0);
    header.set_entry_type(tar::EntryType::Regular);
    builder.append_data(&mut header, path, data)
}

fn pack(spec: &BundleSpec, files_root: &Path) -> Result<Vec<u8>, PipelineError> {
    let mut builder = tar::Builder::new(Vec::new());
    let spec_text = toml::to_string(spec).expect("bundle spec serializes");
    append(&mut builder, SPEC_ENTRY, spec_text.as_bytes(), 0o644)?;
    for (rel, path) in included_files(files_root)? {
        let data = fs::read(&path)?;
        let executable = fs::metadata(&path)?.permissions().mode() & 0o111 != 0;
        let mode = if executable { 0o755 } else { 0o644 };
        append(&mut builder, &format!("{FILES_PREFIX}{rel}"), &data, mode)?;
    }
    Ok(builder.into_inner()?)
}

/// Builds `app` from a checked-out snapshot according to its manifest.
pub fn build(
    snapshot: &Path,
    app: &str,
    manifest: &Manifest,
    timeout: Duration,
    extra_path: &[PathBuf],
) -> Result<BuildArtifact, PipelineError> {
    let (spec, files_root) = match &manifest.build_recipe {
        BuildRecipe::StaticSite(dir) => {
            let root = snapshot.join(dir);
            if !root.is_dir() {
                return Err(PipelineError::BuildFailed(format!(
                    "static_site directory {dir:?} does not exist"
                )));
            }
            let spec = BundleSpec {
                app: app.to_string(),
                kind: BundleKind::Static,
                command: None,
                port: manifest.port,
                readiness_path: manifest.readiness_path.clone(),
            };
            (spec, root)
        }
        BuildRecipe::Exec(command) => {
            if let Some(build_cmd) = &manifest.build_command {
                let path = search_path(extra_path)?;
                let env: Vec<(&str, &str)> = path.iter().map(|p| ("PATH", p.as_str())).collect();
                let out = run_shell(build_cmd, snapshot, &env, timeout)?;
                if out.timed_out {
                    return Err(PipelineError::Timeout {
                        stage: "build",
                        after: timeout,
                    });
                }
                if !out.success() {
                    return Err(PipelineError::BuildFailed(format!(
                        "build_command exited with {:?}: {}",
                        out.exit_code,
                        out.output.trim_end()
                    )));
                }
            }
            let spec = BundleSpec {
                app: app.to_string(),
                kind: BundleKind::Exec,
                command: Some(command.clone()),
                port: manifest.port,
                readiness_path: manifest.readiness_path.clone(),
            };
            (spec, snapshot.to_path_buf())
        }
    };
    let payload = pack(&spec, &files_root)?;
    let artifact_id = content_id(&payload);
    Ok(BuildArtifact {
        version: version_tag(&artifact_id),
        artifact_id,
        app: app.to_string(),
        spec,
        payload,
    })
}

/// Extracts a bundle's files into `dest` and returns its run spec.
pub fn unpack(payload: &[u8], dest: &Path) -> Result<BundleSpec, PipelineError> {
    fs::create_dir_all(dest)?;
    let mut archive = tar::Archive::new(payload);
    let mut spec = None;
    for entry in archive.entries()? {
        let mut entry = entry?;
        let path = entry.path()?.to_string_lossy().into_owned();
        if path == SPEC_ENTRY {
            let mut text = String::new();
            entry.read_to_string(&mut text)?;
            spec = Some(
                toml::from_str::<BundleSpec>(&text)
                    .map_err(|e| PipelineError::BadBundle(format!("bundle.toml: {e}")))?,
            );
            continue;
        }
        let rel = path
            .strip_prefix(FILES_PREFIX)
            .ok_or_else(|| PipelineError::BadBundle(format!("unexpected entry {path:?}")))?;
        if !Path::new(rel)
            .components()
            .all(|c| matches!(c, Component::Normal(_)))
        {
            return Err(PipelineError::BadBundle(format!("unsafe entry {path:?}")));
        }
        let target = dest.join(rel);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        entry.unpack(&target)?;
    }
    spec.ok_or_else(|| PipelineError::BadBundle("missing bundle.toml".into()))
}
