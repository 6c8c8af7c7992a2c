//! Deterministic stream derivation for parallel simulation.
//!
//! Each worker stream is keyed by (master seed, stream index) through a
//! splitmix64 expansion, so results do not depend on thread scheduling or on
//! how work is chunked across workers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
pub(crate) fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive the generator for stream `index` under `seed`. Streams with
/// distinct indices are independent for all practical purposes, and the
/// mapping is a pure function of its two arguments.
pub fn derive_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ index.wrapping_mul(0xd1342543de82ef95).rotate_left(17);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
