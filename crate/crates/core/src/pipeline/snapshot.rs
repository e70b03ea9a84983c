//! Directory snapshots: a stable content hash and an isolated copy.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use walkdir::WalkDir;

/// Entries skipped when hashing or copying a repo.
const IGNORED: &[&str] = &[".git"];

pub(crate) fn included_files(root: &Path) -> io::Result<Vec<(String, PathBuf)>> {
    let mut files = Vec::new();
    let walker = WalkDir::new(root)
        .follow_links(false)
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !IGNORED.iter().any(|i| e.file_name() == *i));
    for entry in walker {
        let entry = entry.map_err(io::Error::other)?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields paths under its root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        files.push((rel, entry.into_path()));
    }
    files.sort();
    Ok(files)
}

/// SHA-256 over every regular file, in path order: `path \0 len contents`.
/// Metadata (mtimes, permissions) does not contribute.
pub fn snapshot_hash(root: &Path) -> io::Result<String> {
    if !root.is_dir() {
        return Err(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{} is not a directory", root.display()),
        ));
    }
    let mut h = Sha256::new();
    for (rel, path) in included_files(root)? {
        let data = fs::read(&path)?;
        h.update(rel.as_bytes());
        h.update([0]);
        h.update((data.len() as u64).to_be_bytes());
        h.update(&data);
    }
    Ok(hex::encode(h.finalize()))
}

/// Copies the snapshot into `dest` (created if missing), preserving
/// executable bits.
pub fn copy_snapshot(src: &Path, dest: &Path) -> io::Result<()> {
    fs::create_dir_all(dest)?;
    for (rel, path) in included_files(src)? {
        let target = dest.join(&rel);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::copy(&path, &target)?;
    }
    Ok(())
}

/// A pushed revision names a snapshot by its full hash or a prefix of at
/// least seven hex digits; an empty revision accepts whatever is there.
pub fn revision_matches(revision: &str, actual: &str) -> bool {
    let revision = revision.trim().to_ascii_lowercase();
    revision.is_empty() || (revision.len() >= 7 && actual.starts_with(&revision))
}
