//! Counter-based seed derivation.
//!
//! Every random stream in the crate is keyed by a master seed plus a path of
//! integers (record index, hypothesis id, side, ...). Streams never depend on
//! iteration order or thread schedule, so a parallel run reproduces a serial
//! one exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used across the crate.
pub mod tag {
    pub const OBSERVATIONAL: u64 = 0x6f62_7365_7276;
    pub const TWIN_REQUEST: u64 = 0x7477_696e_7271;
    pub const X0_POOL: u64 = 0x7830_706f_6f6c;
    pub const SPLIT: u64 = 0x0073_706c_6974;
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const ORACLE: u64 = 0x6f72_6163_6c65;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes `(seed, path...)` into a single 64-bit stream key.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Deterministic RNG for the stream identified by `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

/// Folds an action sequence into a stream key component.
pub fn actions_key(actions: &[u32]) -> u64 {
    actions.iter().fold(splitmix64(actions.len() as u64), |acc, &a| splitmix64(acc ^ u64::from(a)))
}
