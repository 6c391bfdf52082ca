//! Seed derivation and hashing shared by every stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based seed derivation: a pure function of `(parent, stream, index)`,
/// so any task's stream is independent of scheduling order.
pub fn derive_seed(parent: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(parent) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ index)
}

pub fn rng_from(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Stream identifiers for [`derive_seed`].
pub mod streams {
    pub const STAGE1_DATA: u64 = 1;
    pub const STAGE1_TRAIN: u64 = 2;
    pub const NE_INIT: u64 = 3;
    pub const NE_GENERATION: u64 = 4;
    pub const NE_BREED: u64 = 5;
    pub const STAGE3_DATA: u64 = 6;
    pub const STAGE3_TRAIN: u64 = 7;
    pub const EVAL: u64 = 8;
    pub const SUPERVISED_DATA: u64 = 9;
    pub const SUPERVISED_TRAIN: u64 = 10;
    pub const FINGERPRINT: u64 = 11;
    pub const SINGLE_AGENT: u64 = 12;
    pub const SWEEP_POINT: u64 = 13;
    pub const EPISODE_ENV: u64 = 14;
    pub const EPISODE_POLICY: u64 = 15;
    pub const AUDIT: u64 = 16;
}
