//! Content-addressed artifact store.
//!
//! An artifact lives at `<root>/<first two hex chars>/<artifact_id>` where
//! `artifact_id` is the SHA-256 of its bytes. Writes are idempotent and go
//! through a temp file plus rename, so a reader never sees a partial file.
//! Every read re-hashes the bytes against the id.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("artifact store full: {needed} bytes needed, {available} of {quota} available")]
    StorageFull {
        needed: u64,
        available: u64,
        quota: u64,
    },
    #[error("artifact {0} not found")]
    NotFound(String),
    #[error("artifact {id} failed verification (content hashes to {actual})")]
    Corrupt { id: String, actual: String },
    #[error("malformed artifact id {0:?}")]
    MalformedId(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactRef {
    pub artifact_id: String,
    pub path: PathBuf,
    pub size: u64,
}

#[derive(Debug)]
pub struct ArtifactStore {
    root: PathBuf,
    quota: u64,
    /// Serializes the check-then-write of `put` against the quota.
    used: Mutex<u64>,
}

fn valid_id(id: &str) -> bool {
    id.len() == 64
        && id
            .bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

impl ArtifactStore {
    /// Opens (or creates) a store; existing artifacts count toward `quota`.
    pub fn open(root: impl Into<PathBuf>, quota: u64) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut used = 0;
        for shard in fs::read_dir(&root)? {
            let shard = shard?;
            if !shard.file_type()?.is_dir() {
                continue;
            }
            for f in fs::read_dir(shard.path())? {
                let f = f?;
                if valid_id(&f.file_name().to_string_lossy()) {
                    used += f.metadata()?.len();
                }
            }
        }
        Ok(ArtifactStore {
            root,
            quota,
            used: Mutex::new(used),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn quota(&self) -> u64 {
        self.quota
    }

    pub fn used(&self) -> u64 {
        *self.used.lock()
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        self.root.join(&id[..2]).join(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        valid_id(id) && self.path_for(id).is_file()
    }

    pub fn put(&self, bytes: &[u8]) -> Result<ArtifactRef, StoreError> {
        let id = content_id(bytes);
        let path = self.path_for(&id);
        let size = bytes.len() as u64;
        let mut used = self.used.lock();
        if path.is_file() {
            return Ok(ArtifactRef {
                artifact_id: id,
                path,
                size,
            });
        }
        let available = self.quota.saturating_sub(*used);
        if size > available {
            return Err(StoreError::StorageFull {
                needed: size,
                available,
                quota: self.quota,
            });
        }
        let shard = path.parent().expect("artifact path has a shard directory");
        fs::create_dir_all(shard)?;
        let mut tmp = tempfile::NamedTempFile::new_in(shard)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        *used += size;
        Ok(ArtifactRef {
            artifact_id: id,
            path,
            size,
        })
    }

    pub fn get(&self, id: &str) -> Result<Vec<u8>, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::MalformedId(id.to_string()));
        }
        let bytes = match fs::read(self.path_for(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(id.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let actual = content_id(&bytes);
        if actual != id {
            return Err(StoreError::Corrupt {
                id: id.to_string(),
                actual,
            });
        }
        Ok(bytes)
    }

    /// Ids of every stored artifact, sorted.
    pub fn list(&self) -> io::Result<Vec<String>> {
        let mut ids = Vec::new();
        for shard in fs::read_dir(&self.root)? {
            let shard = shard?;
            if shard.file_type()?.is_dir() {
                for f in fs::read_dir(shard.path())? {
                    let name = f?.file_name().to_string_lossy().into_owned();
                    if valid_id(&name) {
                        ids.push(name);
                    }
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path(), 1 << 20).unwrap();
        let r = store.put(b"hello").unwrap();
        // sha256("hello"), computed independently
        assert_eq!(
            r.artifact_id,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert_eq!(r.path, dir.path().join("2c").join(&r.artifact_id));
        assert_eq!(store.get(&r.artifact_id).unwrap(), b"hello");
    }

    #[test]
    fn idempotent_put() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path(), 1 << 20).unwrap();
        let a = store.put(b"same").unwrap();
        let b = store.put(b"same").unwrap();
        assert_eq!(a, b);
        assert_eq!(store.list().unwrap().len(), 1);
        assert_eq!(store.used(), 4);
    }

    #[test]
    fn fills_to_quota() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path(), 1000).unwrap();
        let mut stored = Vec::new();
        let mut i = 0u32;
        let err = loop {
            let blob = vec![(i % 251) as u8; 90 + i as usize];
            match store.put(&blob) {
                Ok(r) => stored.push((r.artifact_id, blob)),
                Err(e) => break e,
            }
            i += 1;
        };
        assert!(matches!(err, StoreError::StorageFull { .. }), "{err}");
        // brute-force oracle: the first k sizes 90..90+k that fit in 1000
        let fits = (0..)
            .take_while(|k| (0..=*k).map(|j| 90 + j).sum::<u64>() <= 1000)
            .count();
        assert_eq!(stored.len(), fits);
        for (id, blob) in &stored {
            assert_eq!(&store.get(id).unwrap(), blob);
        }
        // already-stored content is still accepted when full
        assert!(store.put(&stored[0].1).is_ok());
    }

    #[test]
    fn detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path(), 1 << 20).unwrap();
        let r = store.put(b"payload").unwrap();
        fs::write(&r.path, b"payloaD").unwrap();
        assert!(matches!(
            store.get(&r.artifact_id),
            Err(StoreError::Corrupt { .. })
        ));
        assert!(matches!(
            store.get(&"0".repeat(64)),
            Err(StoreError::NotFound(_))
        ));
        assert!(matches!(
            store.get("../../etc/passwd"),
            Err(StoreError::MalformedId(_))
        ));
    }

    #[test]
    fn reopen_counts_existing_usage() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = ArtifactStore::open(dir.path(), 100).unwrap();
            store.put(&[1u8; 60]).unwrap();
        }
        let store = ArtifactStore::open(dir.path(), 100).unwrap();
        assert_eq!(store.used(), 60);
        assert!(matches!(
            store.put(&[2u8; 50]),
            Err(StoreError::StorageFull { .. })
        ));
    }

    proptest! {
        #[test]
        fn roundtrip_any_bytes(blobs in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..512), 1..10)) {
            let dir = tempfile::tempdir().unwrap();
            let store = ArtifactStore::open(dir.path(), u64::MAX).unwrap();
            let refs: Vec<_> = blobs.iter().map(|b| store.put(b).unwrap()).collect();
            for (r, b) in refs.iter().zip(&blobs) {
                prop_assert_eq!(&store.get(&r.artifact_id).unwrap(), b);
            }
            let distinct: std::collections::BTreeSet<_> = blobs.iter().collect();
            prop_assert_eq!(store.list().unwrap().len(), distinct.len());
        }
    }
}
