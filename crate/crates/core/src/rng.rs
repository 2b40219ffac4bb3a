//! Deterministic random-stream derivation.
//!
//! All stochastic pieces of the pipeline (batch selection, stratified sample
//! jitter, rotation draws for the radial prior, observation noise) pull from
//! ChaCha streams derived *functionally* from `(master seed, stream id,
//! index)`. Nothing holds RNG state across steps, which makes every step a
//! pure function of the parameters — checkpoint resume and repeated runs are
//! bit-identical, and finite-difference probes see frozen randomness.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids; keep distinct so derived streams never collide.
pub mod stream {
    pub const BATCH: u64 = 0x01;
    pub const RAY: u64 = 0x02;
    pub const OBS_NOISE: u64 = 0x03;
    pub const EVAL: u64 = 0x04;
}

/// SplitMix64 finalizer; full-avalanche over the 64-bit input.
fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Mix a master seed with a stream id and an index into one 64-bit seed.
pub fn mix(seed: u64, stream_id: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ stream_id) ^ index)
}

/// RNG for `(seed, stream, index)`; e.g. one per training step, or one per
/// ray within a step via `index = step * batch + position`.
pub fn stream_rng(seed: u64, stream_id: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, stream_id, index))
}
