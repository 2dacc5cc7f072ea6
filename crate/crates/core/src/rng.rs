//! Seeded random number generation.
//!
//! Every stochastic step draws from ChaCha8 seeded through
//! [`rand::SeedableRng::seed_from_u64`], so a single `u64` seed fixes the
//! whole pipeline on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of `seed`.
pub fn seeded_stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
