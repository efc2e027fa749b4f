//! Named random substreams derived from one master seed.
//!
//! Every consumer of randomness (data synthesis, weight init, local training,
//! the adversary, jamming resolution) draws from its own ChaCha stream so that
//! changing one component never perturbs the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Randomness domains of one simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data,
    Init,
    Training,
    Adversary,
    Jamming,
    Geometry,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::Init => 2,
            Stream::Training => 3,
            Stream::Adversary => 4,
            Stream::Jamming => 5,
            Stream::Geometry => 6,
        }
    }
}

/// Plain seeded stream, for callers that manage their own randomness.
pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `domain`, sub-indexed by `index` (client id, round, ...).
pub fn substream(master: u64, domain: Stream, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(splitmix(domain.tag() << 48 ^ index));
    rng
}

/// Two-level index, e.g. (round, client).
pub fn substream2(master: u64, domain: Stream, outer: u64, inner: u64) -> SimRng {
    substream(master, domain, splitmix(outer).wrapping_add(inner))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
