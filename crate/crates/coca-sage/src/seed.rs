//! Stable seed derivation.
//!
//! Every stochastic component derives its RNG seed from a base seed plus an
//! ordered list of role/id components, so independent draws never share a
//! stream and results are reproducible regardless of thread scheduling. The
//! mixer is the splitmix64 finalizer, which is cheap and platform-stable.

/// Role tags used as the first derivation component. Keeping them in one
/// place guarantees two call sites never collide on the same child stream.
pub mod tag {
    pub const PROJECTION: u64 = 1;
    pub const MC_COALITIONS: u64 = 2;
    pub const SELECTION: u64 = 3;
    pub const SBM_FEATURES: u64 = 4;
    pub const SBM_EDGES: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const INIT: u64 = 7;
    pub const SHUFFLE: u64 = 8;
    pub const EPOCH_SAMPLE: u64 = 9;
    pub const EVAL: u64 = 10;
    pub const WEIGHTS: u64 = 11;
    pub const REPEAT: u64 = 12;
    pub const MASK: u64 = 13;
    pub const GATE: u64 = 14;
    pub const TEST_EVAL: u64 = 15;
    pub const DATASET: u64 = 16;
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and an ordered list of components.
/// Different component lists give independent streams; the same list always
/// gives the same seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut acc = mix(base);
    for &p in parts {
        acc = mix(acc ^ mix(p));
    }
    acc
}
