//! Named random sub-streams derived from one seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent streams so each component can be replayed on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Sampling,
    Init,
    Validation,
    Eval,
    GradCheck,
    Synthetic,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Sampling => 1,
            Stream::Init => 2,
            Stream::Validation => 3,
            Stream::Eval => 4,
            Stream::GradCheck => 5,
            Stream::Synthetic => 6,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
