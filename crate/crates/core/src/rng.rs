//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator whose key is
//! derived from a root seed and a tuple of counters (iteration, row, purpose).
//! Any row of any iteration can therefore be regenerated on its own, in any
//! order, on any thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes, kept distinct so independent quantities never share a
/// generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Deployment = 1,
    Initialization = 2,
    Environment = 3,
    Bias = 4,
    Replica = 5,
    SpectralStart = 6,
    DistanceNoise = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `keys` into `seed`.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(seed: u64, purpose: Purpose, keys: &[u64]) -> ChaCha8Rng {
    let mut s = derive_seed(seed, &[purpose as u64]);
    s = derive_seed(s, keys);
    ChaCha8Rng::seed_from_u64(s)
}
