//! Seed derivation. Every random choice in the crate draws from a ChaCha
//! stream whose seed is a pure function of the caller's seed and a stream
//! tag, so results never depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `seed ⊕ hash(tag)`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed ^ mix64(tag)
}

pub fn rng_for(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

// Stream tags for the independent random stages of one run.
pub(crate) const STREAM_FOLDS: u64 = 0xF01D;
pub(crate) const STREAM_FOLD_MODELS: u64 = 0xF0_0000;
pub(crate) const STREAM_BOOTSTRAP: u64 = 0xB007;
pub(crate) const STREAM_BOOT_MODELS: u64 = 0xB0_0000;
pub(crate) const STREAM_PPI_SPLIT: u64 = 0x0991;
pub(crate) const STREAM_PPI_MODEL: u64 = 0x0992;
pub(crate) const STREAM_NOFOLDS_MODEL: u64 = 0x0A11;
pub(crate) const STREAM_DATA: u64 = 0xDA7A;
