//! Deterministic seed derivation so every random stream in the pipeline can
//! be reproduced from a single run seed plus a few integer tags.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `tags` into `base`; distinct tag paths give independent streams.
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tags))
}

// stream tags
pub(crate) const STIMULUS: u64 = 1;
pub(crate) const SCANPATH: u64 = 2;
pub(crate) const APPEARANCE: u64 = 3;
pub(crate) const FRAME_NOISE: u64 = 4;
pub(crate) const SEQUENCE_PICK: u64 = 5;
pub(crate) const SPLIT: u64 = 6;
pub(crate) const INIT: u64 = 7;
pub(crate) const SHUFFLE: u64 = 8;
