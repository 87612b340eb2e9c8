//! Deterministic RNG derivation.
//!
//! Every random draw in the crate comes from a ChaCha stream derived from a
//! master seed plus a list of integer tags (and optionally a name). Derivation
//! is order-independent: generating attribute 7's latent never depends on how
//! many draws attribute 6 consumed. This is what makes dataset synthesis,
//! parameter initialization, batch shuffling, and auxiliary sampling
//! reproducible and resumable without serializing generator state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of splitmix64; a good 64-bit mixer.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold `value` into a running hash.
pub fn mix(hash: u64, value: u64) -> u64 {
    splitmix64(hash ^ splitmix64(value))
}

/// Hash a name (e.g. a parameter path) into a tag.
pub fn name_tag(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        splitmix64(h ^ u64::from(b))
    })
}

/// Derive a generator from a master seed and a list of tags.
pub fn derive_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let h = tags.iter().fold(splitmix64(seed), |h, &t| mix(h, t));
    ChaCha8Rng::seed_from_u64(h)
}

/// Derive a generator from a master seed and a name.
pub fn derive_named_rng(seed: u64, name: &str) -> ChaCha8Rng {
    derive_rng(seed, &[name_tag(name)])
}
