//! Counter-based deterministic random streams.
//!
//! Every stochastic component derives its own stream from a root seed plus
//! a list of integer tags (sample index, timestep, ...). The tag list is
//! hashed into a full 256-bit ChaCha key, so streams never collide and a
//! sample's noise is independent of how many other samples are generated
//! or in which order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives an independent RNG stream from `(seed, tags...)`.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for &t in tags {
        hasher.update(t.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Fills `out` with standard-normal draws from the given stream.
pub fn fill_standard_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    use rand_distr::{Distribution, StandardNormal};
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

/// One standard-normal draw.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}
