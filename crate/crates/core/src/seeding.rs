//! Deterministic sub-seed derivation.
//!
//! Every randomized component (init, partitioning, client sampling, batch
//! shuffling, noise injection) draws from a ChaCha stream seeded through
//! `derive_seed`, so a single experiment seed pins the whole run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mix a base seed with a tag path (e.g. `[round, client_id]`) into a new seed.
///
/// SplitMix64-style finalizer; collisions between distinct tag paths are not
/// a concern at simulator scale.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = base ^ 0x9e37_79b9_7f4a_7c15;
    for &t in tags {
        state = state.wrapping_add(t).wrapping_add(0x9e37_79b9_7f4a_7c15);
        state = splitmix(state);
    }
    splitmix(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// ChaCha RNG for the given seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
