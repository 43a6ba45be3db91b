//! Seed derivation for independent, order-stable random streams.
//!
//! Every stochastic component (bootstrap buckets, forest trees, CV folds,
//! dropout masks per sample) gets its own ChaCha stream keyed by the run seed
//! plus a path of stream ids. Parallel execution therefore never changes which
//! numbers a component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of stream identifiers.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &id| splitmix64(acc ^ splitmix64(id.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

/// A ChaCha8 generator for the stream `(base, path...)`.
pub fn stream(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}
