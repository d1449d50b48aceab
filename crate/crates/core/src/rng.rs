//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 keyed by a 64-bit seed. ChaCha is a
//! counter-mode stream cipher, so a given seed reproduces the same stream on
//! every platform. Per-cell seeds are derived with [`derive_seed`], a
//! SplitMix64 fold over the parent seed and an index path.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SeedRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// `h₀ = splitmix(base)`, `hᵢ₊₁ = splitmix(hᵢ ⊕ partᵢ)`.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |h, &part| splitmix64(h ^ part))
}

pub fn standard_normal_vec(rng: &mut SeedRng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}
