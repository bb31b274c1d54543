//! Seeded randomness. Every stochastic step draws from a `ChaCha8Rng`
//! derived from an explicit `u64` seed so runs are reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `(base, stream)`.
///
/// Children of one base never depend on execution order, so trials seeded
/// with `derive_seed(base, i)` can run in any order or concurrently.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    mix64(mix64(base ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(mix64(stream.wrapping_add(1))))
}
