//! Seeded random streams.
//!
//! Every stochastic component draws from its own ChaCha stream derived from a
//! `(seed, stream)` pair, so components never share random state and a given
//! seed replays bit-identically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Stream identifiers used by the environment and learners.
pub mod stream {
    pub const INITIAL_REGIME: u64 = 1;
    pub const REGIME_INNOVATION: u64 = 2;
    pub const OBSERVATION: u64 = 3;
    /// Drift streams occupy `DRIFT + component`.
    pub const DRIFT: u64 = 16;
    /// Long-memory streams occupy `LONG_MEMORY + component`.
    pub const LONG_MEMORY: u64 = 32;
    pub const EXPLORATION: u64 = 64;
    pub const REPLAY: u64 = 65;
    pub const INIT_PARAMS: u64 = 66;
}

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// SplitMix64 finaliser, used to derive child seeds (per run, per sweep cell).
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
