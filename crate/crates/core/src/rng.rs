//! Seeded random streams. Every stochastic stage takes an explicit
//! `ChaCha8Rng`; batch stages derive one child stream per item so results do
//! not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `index` of the master `seed`.
pub fn child(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // stream 0 is left to the master generator itself
    rng.set_stream(index.wrapping_add(1));
    rng
}
