//! Seeded random sub-streams.
//!
//! Every consumer of randomness draws from a ChaCha stream keyed by
//! `(master_seed, purpose, index)`. Episode `k` of every method therefore sees
//! the same initial-state draw, and mechanism draws never perturb the
//! environment stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a sub-stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    Environment,
    Mechanism,
    Audit,
    Other(u64),
}

impl StreamPurpose {
    fn tag(self) -> u64 {
        match self {
            StreamPurpose::Environment => 0x454e_5600,
            StreamPurpose::Mechanism => 0x4d45_4300,
            StreamPurpose::Audit => 0x4155_4400,
            StreamPurpose::Other(t) => t.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x0_7448,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one run, derived from the experiment's master seed and the run's seed label.
pub fn run_seed(master_seed: u64, seed: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(seed.wrapping_add(0x5eed)))
}

/// Deterministic sub-stream for `(master_seed, purpose, index)`.
pub fn substream(master_seed: u64, purpose: StreamPurpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master_seed ^ splitmix64(purpose.tag())));
    rng.set_stream(index);
    rng
}
