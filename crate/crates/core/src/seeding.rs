//! Deterministic seed derivation. Every random stream in the crate is keyed
//! by a tuple of integers mixed through splitmix64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5EED_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(parts))
}

/// Stream tags so that independent consumers never share a random stream.
pub mod tag {
    pub const SCENE: u64 = 1;
    pub const PATH_PHASE: u64 = 2;
    pub const PILOTS: u64 = 3;
    pub const PILOT_NOISE: u64 = 4;
    pub const GPS: u64 = 5;
    pub const VEHICLE: u64 = 6;
    pub const INIT: u64 = 7;
    pub const CSI_ERROR: u64 = 8;
    pub const SHUFFLE: u64 = 9;
    pub const RANDOM_PRECODER: u64 = 10;
}
