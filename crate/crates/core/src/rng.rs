//! Seed plumbing. Every stochastic stage (parameter init, per-episode
//! sampling, epoch shuffles, world generation) gets its own ChaCha stream
//! derived from the run seed, so results do not depend on how many draws an
//! unrelated stage consumed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good enough to decorrelate derived seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed, a stream label and an index.
pub fn child_seed(base: u64, stream: &str, index: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64; // FNV offset basis
    for b in stream.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(base ^ mix(h) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// ChaCha RNG for a derived stream.
pub fn stream_rng(base: u64, stream: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(base, stream, index))
}
