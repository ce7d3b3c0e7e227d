//! Reproducible random number streams.
//!
//! Every stochastic component derives its generator from a master seed and a
//! stream index via ChaCha12's 64-bit stream counter. Stream `i` of seed `s`
//! is the same regardless of thread count or scheduling, so ensembles and
//! Monte-Carlo chunks are bit-reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Generator for stream `index` of `master_seed`.
pub fn stream(master_seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}
