//! Deterministic random streams derived from one master seed.
//!
//! Every consumer asks for a stream by `(domain, step, index)`, so results do
//! not depend on the order in which particles are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

/// Stream domains. Keep these distinct so consumers never share a stream.
pub mod domain {
    pub const INIT: u64 = 1;
    pub const MOTION: u64 = 2;
    pub const RESAMPLE: u64 = 3;
    pub const ACCURATE_RESAMPLE: u64 = 4;
    pub const WORLD: u64 = 10;
    pub const ODOMETRY: u64 = 11;
    pub const OBSERVATIONS: u64 = 12;
}

impl SeedStream {
    pub const fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, domain: u64, step: u64, index: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&domain.to_le_bytes());
        key[16..24].copy_from_slice(&step.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}
