//! Named RNG streams derived from a single run seed.
//!
//! Every consumer of randomness (each env's noise, each env's exploration,
//! parameter init, minibatch shuffling, schedules) gets its own ChaCha8
//! stream keyed by `(seed, domain, index)`, so adding or reordering
//! consumers never perturbs the draws of another, and parallel workers are
//! deterministic regardless of scheduling.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the domain string, mixed with the index.
fn stream_id(domain: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in domain.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= index;
    h.wrapping_mul(0x0000_0100_0000_01b3)
}

/// Derive the RNG stream for `(seed, domain, index)`.
pub fn stream(seed: u64, domain: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(domain, index));
    rng
}

/// Derive a child seed, for components that split further internally.
pub fn derive_seed(seed: u64, domain: &str, index: u64) -> u64 {
    stream(seed, domain, index).random::<u64>()
}

/// Standard normal draw via Box-Muller (one value per call).
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform draw in [lo, hi).
pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}
