//! Deterministic randomness, organized as counter-addressed streams.
//!
//! All stochastic components draw from ChaCha streams derived from a single
//! master seed. Stream 0 is reserved for the bandit's action draws; simulated
//! round `t` (1-based) draws its process and exploration noise from stream
//! `t`. Streams are independent, so replaying any round — or reordering
//! parallel work — cannot change what another round sees.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream index reserved for bandit action sampling.
pub const BANDIT_STREAM: u64 = 0;

/// RNG stream for simulated round `t` (1-based).
pub fn round_stream(master_seed: u64, round: usize) -> ChaCha8Rng {
    stream(master_seed, round as u64)
}

/// RNG for an arbitrary named stream under `master_seed`.
pub fn stream(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Draw a `dim`-vector with i.i.d. `N(0, std^2)` entries.
pub fn gaussian_vector<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize, std: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}
