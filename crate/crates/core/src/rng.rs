//! Seeded randomness.
//!
//! Strategies draw from ChaCha8 streams (`rand_chacha`), which produce the
//! same sequence on every platform. Synthetic evaluation noise instead uses a
//! stateless counter-based generator: SplitMix64 finalisation applied to a
//! key derived from `(seed, subdomain_id, lane)`. Only integer operations and
//! one exact integer-to-float conversion are involved, so the values are
//! bit-identical everywhere and independent of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StrategyRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic 64-bit value for a `(seed, counter, lane)` key.
pub fn keyed_u64(seed: u64, counter: u64, lane: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ counter) ^ lane.wrapping_mul(GOLDEN))
}

/// Uniform in `[0, 1)` with 53 bits of precision.
pub fn keyed_unit(seed: u64, counter: u64, lane: u64) -> f64 {
    (keyed_u64(seed, counter, lane) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Independent stream for one consumer of a run seed.
pub fn stream(seed: u64, purpose: u64) -> StrategyRng {
    ChaCha8Rng::seed_from_u64(keyed_u64(seed, purpose, 0))
}
