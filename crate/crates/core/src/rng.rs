//! Deterministic seed derivation.
//!
//! Every random stream in the crate is addressed by a base seed and a path of
//! stream labels, never by the order in which work happens to be scheduled.
//! That keeps parallel and sequential execution bitwise identical and lets
//! repeated objective evaluations share their sampling noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub mod label {
    pub const DATASET: u64 = 0x01;
    pub const MODEL_INIT: u64 = 0x02;
    pub const TRAIN: u64 = 0x03;
    pub const EVAL: u64 = 0x04;
    pub const REFERENCE: u64 = 0x05;
    pub const MASK_RATIO: u64 = 0x06;
    pub const GENERATE: u64 = 0x07;
    pub const CHAIN: u64 = 0x08;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of stream identifiers.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &id| splitmix64(acc ^ splitmix64(id.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn stream(base: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, path))
}

/// Uniform draw on the open interval (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

/// Standard Gumbel(0, 1) draw.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -(-open_unit(rng).ln()).ln()
}
