//! Deterministic, schedule-independent random streams.
//!
//! Every randomized per-pixel or per-region decision draws from its own
//! stream keyed by `(seed, tags...)`, so results do not depend on the order
//! or thread in which work items are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a list of tags into a single 64-bit key.
#[inline]
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Random stream for `(seed, tags...)`.
#[inline]
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tags))
}

/// Hash-based uniform value in `[0, 1)` without constructing a generator.
#[inline]
pub fn unit_hash(seed: u64, tags: &[u64]) -> f64 {
    (mix(seed, tags) >> 11) as f64 / (1u64 << 53) as f64
}
