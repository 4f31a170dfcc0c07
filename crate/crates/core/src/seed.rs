//! Deterministic sub-seed derivation. Every random stream in the crate is
//! keyed off one user seed plus a fixed path of stream identifiers.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `seed` with each component of `path` in turn.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

// Stream identifiers.
pub const INIT: u64 = 1;
pub const SHUFFLE: u64 = 2;
pub const NOISE: u64 = 3;
pub const MONITOR: u64 = 4;
pub const PERCEPTRON: u64 = 5;
pub const SYNTH: u64 = 6;
