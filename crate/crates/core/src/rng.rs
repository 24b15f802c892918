//! Deterministic random number streams.
//!
//! Every stochastic component draws from its own named stream so that adding
//! a consumer (say, a new dropout site) does not shift the draws seen by the
//! others. Streams are ChaCha20 generators keyed by the master seed and a
//! stable hash of the stream tag.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// FNV-1a, 64 bit. Stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Factory for independent named RNG streams under one master seed.
#[derive(Debug, Clone, Copy)]
pub struct RngPool {
    master_seed: u64,
}

impl RngPool {
    pub fn new(master_seed: u64) -> Self {
        RngPool { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Stream keyed by `tag`. Same (seed, tag) always yields the same stream.
    pub fn stream(&self, tag: &str) -> ChaCha20Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&fnv1a(tag.as_bytes()).to_le_bytes());
        ChaCha20Rng::from_seed(seed)
    }

    /// Stream keyed by `tag` and a numeric index (epoch, layer, ...).
    pub fn stream_indexed(&self, tag: &str, index: u64) -> ChaCha20Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&fnv1a(tag.as_bytes()).to_le_bytes());
        seed[16..24].copy_from_slice(&index.to_le_bytes());
        ChaCha20Rng::from_seed(seed)
    }
}
