//! Seed derivation for reproducible parallel runs.
//!
//! Every random stream is a ChaCha8 generator keyed by the master seed and
//! selected by a 64-bit stream id mixed from two counters (for instance a
//! particle index and a resampling epoch). Streams never depend on the
//! order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type EngineRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic 64-bit mix of a seed and two counters.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(a)) ^ b)
}

/// Generator for stream `(a, b)` under `master`.
pub fn stream_rng(master: u64, a: u64, b: u64) -> EngineRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(splitmix64(a) ^ splitmix64(b.wrapping_add(0x5851_F42D_4C95_7F2D)));
    rng
}
