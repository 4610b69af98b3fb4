//! Seed derivation and counter-based random streams.
//!
//! Every consumer of randomness gets a ChaCha stream addressed by a
//! `(seed, stream)` pair, so draws for subject `i` never depend on how many
//! draws other subjects consumed. Child seeds come from a SplitMix64 mix of
//! the parent seed and a label.

use core::f64::consts::PI;

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub type StreamRng = ChaCha8Rng;

/// Labels for module-level seed derivation.
pub mod label {
    pub const DGP: u64 = 0x01;
    pub const OUTCOME: u64 = 0x02;
    pub const IMPORTANCE: u64 = 0x03;
    pub const NUISANCE: u64 = 0x04;
    pub const BAND: u64 = 0x05;
    pub const BOOTSTRAP: u64 = 0x06;
    pub const CALIBRATION: u64 = 0x07;
    pub const FOLDS: u64 = 0x08;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for `(parent, label)`.
pub fn derive_seed(parent: u64, label: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ splitmix64(label.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Independent stream number `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw on `[0, 1)` with 53 bits of precision.
#[inline]
pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw on `(0, 1]`, safe to pass to `ln`.
#[inline]
pub fn uniform_open0(rng: &mut impl RngCore) -> f64 {
    1.0 - uniform(rng)
}

/// Uniform integer in `0..n`.
#[inline]
pub fn below(rng: &mut impl RngCore, n: usize) -> usize {
    debug_assert!(n > 0);
    ((uniform(rng) * n as f64) as usize).min(n - 1)
}

/// Standard normal via Box-Muller (one draw per call).
pub fn normal(rng: &mut impl RngCore) -> f64 {
    let u1 = uniform_open0(rng);
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Gamma(shape, 1) draw (Marsaglia-Tsang), shape > 0.
pub fn gamma(rng: &mut impl RngCore, shape: f64) -> f64 {
    if shape < 1.0 {
        let u = uniform_open0(rng);
        return gamma(rng, shape + 1.0) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = uniform_open0(rng);
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}

/// Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut impl RngCore, xs: &mut [T]) {
    for i in (1..xs.len()).rev() {
        let j = below(rng, i + 1);
        xs.swap(i, j);
    }
}
