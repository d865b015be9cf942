//! Deterministic derivation of independent RNG streams.
//!
//! Every random decision in the pipeline pulls from a stream derived from
//! the run seed plus a tag path, e.g. `stream(seed, &[RECORD, dim, index])`.
//! Reruns with the same seed reproduce every stream bit-exactly, and
//! workers can own disjoint streams without coordination.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tag namespaces for derived streams. Values are stable; changing them
/// changes every downstream dataset.
pub mod tags {
    pub const RECORD: u64 = 0x01;
    pub const ATTEMPT: u64 = 0x02;
    pub const BATCH: u64 = 0x03;
    pub const QUERY: u64 = 0x04;
    pub const DROPOUT: u64 = 0x05;
    pub const INIT: u64 = 0x06;
    pub const EVAL: u64 = 0x07;
    pub const TRIAL: u64 = 0x08;
}

/// SplitMix64 finalizer; good avalanche, stable across platforms.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a tag path into a single 64-bit stream key.
pub fn mix(seed: u64, path: &[u64]) -> u64 {
    let mut acc = mix64(seed);
    for &t in path {
        acc = mix64(acc ^ mix64(t));
    }
    acc
}

/// Derive an independent ChaCha8 stream for `path` under `seed`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, path))
}
