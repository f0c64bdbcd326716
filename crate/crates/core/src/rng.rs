//! Deterministic, addressable random-number streams.
//!
//! Every stochastic stage draws from its own stream, derived from the run
//! seed plus the stage coordinates (purpose tag, step, cell or particle
//! slot). Trajectories are therefore bitwise reproducible for a fixed seed
//! no matter how the per-cell work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keeping unrelated streams apart.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const COLLIDE: u64 = 2;
    pub const INFLOW: u64 = 3;
    pub const MATCH_RESAMPLE: u64 = 4;
    pub const REALIZATION: u64 = 5;
    pub const REFERENCE: u64 = 6;
}

/// splitmix64 finalizer; full-avalanche mixing of one word.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold the stream coordinates into a single seed word.
pub fn derive_seed(root: u64, parts: &[u64]) -> u64 {
    let mut h = mix(root);
    for &p in parts {
        h = mix(h ^ mix(p));
    }
    h
}

/// Dedicated generator for the stream addressed by `parts`.
pub fn stream(root: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut h = derive_seed(root, parts);
    for chunk in key.chunks_exact_mut(8) {
        h = mix(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
