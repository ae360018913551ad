//! Seeded random streams.
//!
//! Every stochastic operation in the crate takes an explicit 64-bit seed and
//! draws from ChaCha8, a counter-based generator. Independent streams for the
//! same seed (one per resampled block, one per retrain, ...) are selected
//! with the ChaCha stream id rather than by perturbing the seed.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

/// Generator for `seed`, stream 0.
pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Generator for `seed` on an explicit stream.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
