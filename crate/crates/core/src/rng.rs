//! Seeding helpers and counter-keyed random streams.
//!
//! SR(λ) needs replacement draws keyed by `(step, index)` so that the result
//! does not depend on the order in which atoms are visited. The keyed stream
//! below is a SplitMix64 finalizer over the key tuple.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream identifier.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix(splitmix(seed) ^ stream.wrapping_mul(0xD134_2543_DE82_EF95))
}

/// A fresh ChaCha stream for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Uniform draw in `[0, 1)` determined entirely by `(key, a, b, salt)`.
#[inline]
pub fn keyed_uniform(key: u64, a: u64, b: u64, salt: u64) -> f64 {
    let h = splitmix(splitmix(splitmix(key ^ salt) ^ a) ^ b.wrapping_mul(0x2545_F491_4F6C_DD1D));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
