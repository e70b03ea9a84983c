use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BLOB_1M_LEN: usize = 1 << 20;
pub const BLOB_10M_LEN: usize = 10 << 20;
pub const DEFAULT_CORPUS_SEED: u64 = 2019;

/// Bodies served by the blob server. The blobs are pseudo-random bytes
/// generated once from a seed, so every run serves identical content.
#[derive(Clone)]
pub struct BlobCorpus {
    pub seed: u64,
    pub empty: Vec<u8>,
    pub blob_1mb: Vec<u8>,
    pub blob_10mb: Vec<u8>,
}

impl std::fmt::Debug for BlobCorpus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlobCorpus")
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

/// Routes the blob server answers, with their body lengths.
pub const ROUTES: [(&str, usize); 3] = [
    ("/empty", 0),
    ("/blob1m", BLOB_1M_LEN),
    ("/blob10m", BLOB_10M_LEN),
];

pub fn route_body_len(path: &str) -> Option<usize> {
    ROUTES.iter().find(|(p, _)| *p == path).map(|(_, n)| *n)
}

impl BlobCorpus {
    pub fn generate(seed: u64) -> BlobCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blob_1mb = vec![0u8; BLOB_1M_LEN];
        rng.fill_bytes(&mut blob_1mb);
        let mut blob_10mb = vec![0u8; BLOB_10M_LEN];
        rng.fill_bytes(&mut blob_10mb);
        BlobCorpus {
            seed,
            empty: Vec::new(),
            blob_1mb,
            blob_10mb,
        }
    }

    pub fn body(&self, path: &str) -> Option<&[u8]> {
        match path {
            "/empty" => Some(&self.empty),
            "/blob1m" => Some(&self.blob_1mb),
            "/blob10m" => Some(&self.blob_10mb),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_lengths_and_seeded() {
        let a = BlobCorpus::generate(1);
        assert_eq!(a.empty.len(), 0);
        assert_eq!(a.blob_1mb.len(), 1_048_576);
        assert_eq!(a.blob_10mb.len(), 10_485_760);
        for (path, len) in ROUTES {
            assert_eq!(a.body(path).unwrap().len(), len);
        }
        let b = BlobCorpus::generate(1);
        assert!(a.blob_1mb == b.blob_1mb && a.blob_10mb == b.blob_10mb);
        assert_ne!(a.blob_1mb, BlobCorpus::generate(2).blob_1mb);
        // not trivially compressible: every byte value shows up
        let mut seen = [false; 256];
        a.blob_1mb.iter().for_each(|b| seen[*b as usize] = true);
        assert!(seen.iter().all(|s| *s));
    }
}
