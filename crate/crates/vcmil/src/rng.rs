//! Deterministic random streams.
//!
//! Every stochastic component (init, dropout, shuffling, synthesis) draws
//! from a ChaCha stream derived from the run seed plus a stream tag, so a
//! run is fully reproducible from its seed and any step can be recomputed
//! without replaying the steps before it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep independent consumers from sharing a sequence.
pub mod stream {
    pub const MODEL_INIT: u64 = 1;
    pub const DROPOUT: u64 = 2;
    pub const SHUFFLE_ABNORMAL: u64 = 3;
    pub const SHUFFLE_NORMAL: u64 = 4;
    pub const SYNTH: u64 = 5;
}

/// Derive a sub-seed from `(seed, tag, counter)` with splitmix64 mixing.
pub fn derive_seed(seed: u64, tag: u64, counter: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(tag)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9)
        .wrapping_add(counter);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A ChaCha generator for one `(seed, tag, counter)` triple.
pub fn stream_rng(seed: u64, tag: u64, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, counter))
}
