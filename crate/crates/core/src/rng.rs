//! Seed derivation for independent, reproducible random streams.
//!
//! Every stream is keyed by a root seed plus a path of integers (machine
//! index, purpose, repeat, ...). Streams do not depend on how many siblings
//! exist, so adding a machine leaves the existing machines' draws untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for all simulation draws.
pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `root` and a key path.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &key| splitmix64(acc ^ splitmix64(key)))
}

pub fn stream(root: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, path))
}
