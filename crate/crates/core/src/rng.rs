//! Deterministic RNG substreams.
//!
//! Every parameter block draws from its own stream keyed by
//! `(seed, tag, block, iteration)`, so per-gene updates can be scheduled on
//! any thread without changing the draw sequence. Identical inputs produce
//! bit-identical chains regardless of thread count.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Stream tags; keep values stable, they are part of the reproducibility
/// contract.
pub mod tag {
    pub const GENE: u64 = 0x01;
    pub const HYPER: u64 = 0x02;
    pub const SIM: u64 = 0x03;
    pub const INIT: u64 = 0x04;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix the key words into a single 64-bit seed.
pub fn mix(seed: u64, tag: u64, block: u64, iter: u64) -> u64 {
    let mut h = splitmix64(seed ^ 0x6a09_e667_f3bc_c908);
    h = splitmix64(h ^ tag);
    h = splitmix64(h ^ block);
    h = splitmix64(h ^ iter);
    h
}

/// RNG for one (block, iteration) substream.
pub fn substream(seed: u64, tag: u64, block: u64, iter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tag, block, iter))
}
