//! Run-level randomness.
//!
//! Every stochastic choice in a run (initialization, environment layouts,
//! action sampling, Gumbel noise, minibatch shuffles) draws from one ChaCha
//! stream seeded from the run seed, so a run is reproducible from its config.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> RunRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child stream, e.g. for one environment in a pool.
pub fn fork(rng: &mut RunRng) -> RunRng {
    ChaCha8Rng::seed_from_u64(rng.random())
}

/// Standard Gumbel(0, 1) draw.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // open interval keeps both logs finite
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -crate::math::ln(-crate::math::ln(u))
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}
