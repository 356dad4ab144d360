//! Seeded random streams. Every stochastic routine takes an explicit stream;
//! independent streams for replicates and chains come from `derive`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `id` of the family keyed by `seed`. Distinct `(seed, id)` pairs give
/// distinct keystreams.
pub fn derive(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
