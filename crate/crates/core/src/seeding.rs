//! Deterministic seed derivation for independent trials.
//!
//! A master seed fans out to per-trial generators through a SplitMix64
//! step, so trial `i` is reproducible on its own and reordering or
//! parallelizing trials cannot change any trial's stream.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `index`-th output of a SplitMix64 sequence started at `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix(master.wrapping_add(GOLDEN.wrapping_mul(index.wrapping_add(1))))
}

/// Generator for trial `index` under `master`; same pair, same stream.
pub fn trial_rng(master: u64, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, index))
}
