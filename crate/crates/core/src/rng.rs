//! Seeded random streams.
//!
//! Every stochastic routine draws from a ChaCha8 generator. Independent
//! substreams are derived from a root seed and a path of indices (for example
//! `[tag, subject, pair]`) by folding the path through SplitMix64 and using
//! the result as the ChaCha stream id. The root seed keys the generator, so
//! two different paths never share a keystream and results do not depend on
//! scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep unrelated consumers of one seed apart.
pub mod tag {
    pub const POPULATION: u64 = 0x0070_6f70;
    pub const CHOICES: u64 = 0x0063_686f;
    pub const BAND: u64 = 0x6261_6e64;
    pub const TABU: u64 = 0x7461_6275;
    pub const GMM: u64 = 0x0067_6d6d;
    pub const SUBJECT_FIT: u64 = 0x0066_6974;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fold_path(path: &[u64]) -> u64 {
    path.iter()
        .fold(0x5eed_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Generator for the substream addressed by `path` under `seed`.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold_path(path));
    rng
}

/// Child seed for handing to a routine that takes a plain `u64` seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    splitmix64(seed ^ fold_path(path))
}
