//! Keyed random sub-streams.
//!
//! Every consumer of randomness gets its own generator derived from the run
//! seed, a [`Stream`] tag, and integer keys such as (episode, pair, step). No
//! generator is shared between purposes, so for example the delay sequence of
//! an episode cannot be perturbed by how many action samples were drawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Delay,
    EnvReset,
    PreyNoise,
    Init,
    Episode,
    Action,
    Request,
    Update,
    Eval,
    FinalEval,
    Test,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Delay => 0x64656c6179,
            Stream::EnvReset => 0x7265736574,
            Stream::PreyNoise => 0x70726579,
            Stream::Init => 0x696e6974,
            Stream::Episode => 0x65706973,
            Stream::Action => 0x616374,
            Stream::Request => 0x726571,
            Stream::Update => 0x757064,
            Stream::Eval => 0x6576616c,
            Stream::FinalEval => 0x66696e616c,
            Stream::Test => 0x74657374,
        }
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds the seed, stream tag and keys into one 64-bit key.
pub fn derive_key(seed: u64, stream: Stream, keys: &[u64]) -> u64 {
    let mut h = mix(seed ^ mix(stream.tag()));
    for (pos, &k) in keys.iter().enumerate() {
        h = mix(h ^ mix(k.wrapping_add((pos as u64 + 1).wrapping_mul(0xa076_1d64_78bd_642f))));
    }
    h
}

pub fn substream(seed: u64, stream: Stream, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, stream, keys))
}

/// A single uniform draw in `[0, 1)` from a keyed stream.
pub fn keyed_uniform(seed: u64, stream: Stream, keys: &[u64]) -> f64 {
    substream(seed, stream, keys).gen::<f64>()
}
