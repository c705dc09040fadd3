//! Splittable seeding.
//!
//! A master seed is expanded into independent streams by hashing a path of
//! tags with SplitMix64: `derive(master, &[stream, a, b, ..])`. Each subsystem
//! owns a stream tag, so adding draws in one subsystem never shifts the
//! randomness seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_DATAGEN: u64 = 1;
pub const STREAM_CLIENT: u64 = 2;
pub const STREAM_CLUSTERING: u64 = 3;
pub const STREAM_XAI: u64 = 4;
pub const STREAM_INIT: u64 = 5;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

pub fn rng(master: u64, path: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive(master, path))
}
