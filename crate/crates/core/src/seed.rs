//! Seed derivation.
//!
//! Every random stream is derived from one user seed and a purpose string:
//! `subseed(seed, purpose) = splitmix64(seed ^ fnv1a64(purpose))`. The
//! resulting `u64` seeds a ChaCha8 generator, whose output is stable across
//! platforms and crate versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn subseed(seed: u64, purpose: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(purpose.as_bytes()))
}

pub fn rng_for(seed: u64, purpose: &str) -> Rng {
    ChaCha8Rng::seed_from_u64(subseed(seed, purpose))
}
