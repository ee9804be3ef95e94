//! Seed derivation for reproducible, independently-seeded random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A generator keyed by a base seed and a path of stream labels, e.g.
/// `(seed, [EPOCH_STREAM, epoch, trajectory_index])`.
pub fn derive(seed: u64, path: &[u64]) -> Rng {
    let mut state = splitmix64(seed);
    for &p in path {
        state = splitmix64(state ^ splitmix64(p.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    ChaCha8Rng::seed_from_u64(state)
}

/// Stable 64-bit FNV-1a hash, for keying streams by string ids.
pub fn label(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn seeded(seed: u64) -> Rng {
    derive(seed, &[])
}
