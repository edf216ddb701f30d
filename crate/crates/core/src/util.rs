//! Seeded RNG helpers shared across modules.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// All randomness in this crate flows through ChaCha8 streams seeded here,
/// so identical seeds give bit-identical runs on every platform.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal sample computed in f32 so the value survives an
/// f32 round trip (weights are serialized as 32-bit floats).
pub fn normal_f32(rng: &mut ChaCha8Rng) -> f32 {
    // Box-Muller on two uniform draws; the first is kept away from zero.
    let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
    let u2: f32 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos()
}

/// Default seed, overridable through the DT_SEED environment variable.
pub fn default_seed() -> u64 {
    std::env::var("DT_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}
