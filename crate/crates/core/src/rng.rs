//! Named random streams derived from one 64-bit master seed.
//!
//! Each stream is identified by a label and an index (repeat number,
//! ensemble size, ...). The derived seed is the first eight bytes of
//! SHA-256 over `seed || label || index`, so sub-seeds never depend on the
//! order in which streams are requested.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub const DATASET: &str = "dataset";
pub const INIT_ENSEMBLE: &str = "init-ensemble";
pub const NOISE: &str = "noise";
pub const PRIOR_SPD: &str = "prior-spd";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn seed(&self, label: &str, index: u64) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(self.master.to_le_bytes());
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        hasher.update(index.to_le_bytes());
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }

    pub fn rng(&self, label: &str, index: u64) -> StreamRng {
        rng_from_seed(self.seed(label, index))
    }

    /// A child splitter, used to nest experiments (e.g. one per ensemble size).
    pub fn child(&self, label: &str, index: u64) -> SeedStreams {
        SeedStreams::new(self.seed(label, index))
    }
}

pub fn rng_from_seed(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
