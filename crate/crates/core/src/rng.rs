//! Seeded randomness. Every random process in a run draws from its own ChaCha stream
//! derived from the run seed, so changing one knob does not perturb unrelated draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Placement = 1,
    Caching = 2,
    Mobility = 3,
    Requests = 4,
    TieBreak = 5,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
