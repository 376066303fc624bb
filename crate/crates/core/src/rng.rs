//! Seeding conventions.
//!
//! Every random draw comes from a ChaCha8 generator seeded with a 64-bit
//! seed and a stream id, so independent consumers of the same seed never
//! share a keystream. Derived seeds for sweep realizations are produced by a
//! SplitMix64 finalizer over the tuple of indices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::{Real, C};

/// Keystream ids. Adding a consumer means adding a variant, never reusing one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub(crate) enum Stream {
    DiagonalEnergies = 1,
    Couplings = 2,
    PerturbationGenerator = 3,
    InitialState = 4,
    EigenstateIndex = 5,
    TimeSpacing = 6,
}

pub(crate) fn generator(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministically mixes a base seed with a sequence of indices.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Standard normal draw, taken in `f64` so both precisions see the same stream.
#[inline]
pub(crate) fn normal<R: Real>(rng: &mut ChaCha8Rng) -> R {
    let x: f64 = StandardNormal.sample(rng);
    R::lit(x)
}

/// Complex Gaussian with `E|z|^2 = 1` (real and imaginary parts `N(0, 1/2)`).
#[inline]
pub(crate) fn complex_normal<R: Real>(rng: &mut ChaCha8Rng) -> C<R> {
    let re: f64 = StandardNormal.sample(&mut *rng);
    let im: f64 = StandardNormal.sample(rng);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    C::new(R::lit(re * s), R::lit(im * s))
}
