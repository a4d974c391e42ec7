//! Seed derivation and deterministic random streams.
//!
//! Every stochastic step (initialization, shuffling, sampling, drift
//! selection) draws from its own ChaCha8 stream whose seed is a hash of the
//! master seed and the step's coordinates, e.g. `(master, node_id, round)`.
//! Streams therefore do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep derived seeds for different purposes apart.
pub mod tag {
    pub const INIT: u64 = 0x1001;
    pub const PARTITION: u64 = 0x1002;
    pub const SAMPLING: u64 = 0x1003;
    pub const LOCAL_TRAIN: u64 = 0x1004;
    pub const DRIFT_TRAIN: u64 = 0x1005;
    pub const DRIFT_TEST: u64 = 0x1006;
    pub const RECOVERY: u64 = 0x1007;
    pub const SCRATCH_INIT: u64 = 0x1008;
    pub const TEST_PARTITION: u64 = 0x1009;
    pub const SYNTH: u64 = 0x100a;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of coordinates into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3, |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_stream(parts: &[u64]) -> ChaCha8Rng {
    stream(derive_seed(parts))
}

/// FNV-1a, used to fingerprint world-state snapshots.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
