//! Counter-style random streams.
//!
//! A stream is a ChaCha8 generator whose 256-bit key is derived from a
//! 64-bit seed and a path of indices (replicate number, grid cell, ...).
//! Any stream can be built independently of every other, so parallel
//! workers reproduce the sequential draws exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream namespaces. Distinct tags keep data-generation and permutation
/// draws from ever sharing a key.
pub mod tag {
    pub const PERMUTATION: u64 = 0x7065_726d;
    pub const DESIGN: u64 = 0x6467_7021;
    pub const REPLICATE_SEED: u64 = 0x7273_6564;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `seed` and `path` into a single 64-bit value.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for &p in path {
        h = splitmix64(h ^ splitmix64(p ^ 0xD134_2543_DE82_EF95));
    }
    h
}

/// Independent generator for `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut h = derive_seed(seed, path);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
