//! Seeded generator plumbing shared by environments, agents and experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the crate. Every run is reproducible from its seed.
pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Mixes a base seed with a list of stream tags into an independent seed.
///
/// Each tag is folded through a splitmix64 round so that neighbouring tags
/// (user 0, user 1, ...) land far apart.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(base ^ 0x5DEE_CE66_D1CE_4E5B);
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    state
}

pub fn derived(base: u64, tags: &[u64]) -> SimRng {
    seeded(derive_seed(base, tags))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
