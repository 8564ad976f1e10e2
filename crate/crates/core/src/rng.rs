//! Seed derivation and the crate-wide RNG.
//!
//! Everything stochastic in the pipeline draws from a `ChaCha8Rng` whose seed
//! is derived from a user seed plus a purpose tag and stream indices. Derived
//! streams are independent of evaluation order, so batch-parallel work remains
//! reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG used throughout the crate. ChaCha8 is portable across platforms and
/// rand versions, which keeps byte-identical reproducibility contracts honest.
pub type Rng = ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for cheap seed mixing.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed, a purpose tag and stream indices.
pub fn derive_seed(seed: u64, tag: &str, streams: &[u64]) -> u64 {
    let mut h = mix(seed ^ 0x6a09_e667_f3bc_c908);
    for b in tag.as_bytes() {
        h = mix(h ^ u64::from(*b));
    }
    for s in streams {
        h = mix(h ^ *s);
    }
    h
}

/// Construct the RNG for a derived stream.
pub fn stream_rng(seed: u64, tag: &str, streams: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tag, streams))
}
