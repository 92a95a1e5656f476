//! Deterministic seed derivation.
//!
//! Every randomized stage derives its own generator from a 64-bit base seed,
//! a stage tag and an index. Splitting order for forest training: one stream
//! per tree (trees, then bootstrap draws, then split-feature draws), so
//! results are identical regardless of how many threads train trees.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_BOOTSTRAP: u64 = 0x01;
pub const TAG_SMOTE: u64 = 0x02;
pub const TAG_IMPORTANCE: u64 = 0x03;
pub const TAG_SELECT: u64 = 0x04;
pub const TAG_FOREST: u64 = 0x05;
pub const TAG_CV: u64 = 0x06;
pub const TAG_SYNTH: u64 = 0x07;

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a stage tag and an index into a fresh 64-bit seed.
pub fn derive_seed(base: u64, tag: u64, idx: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ tag) ^ idx)
}

pub fn derived_rng(base: u64, tag: u64, idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, idx))
}
