//! Deterministic, splittable random-number plumbing.
//!
//! Every Monte-Carlo path draws from a ChaCha8 stream selected by
//! `(seed, path index)`. ChaCha streams are counter-based, so any path's
//! stream can be opened independently of the others; parallel path loops
//! are bit-reproducible regardless of scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG for one path: stream `path_index` of the generator seeded by `seed`.
pub fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index.into());
    rng
}

/// Derive an independent seed from `seed` and a role tag (splitmix64 round).
///
/// Used to give the two sides of a duality comparison, or repeated
/// experiments, unrelated streams from one configured seed.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
