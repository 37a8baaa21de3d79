//! Deterministic random-number plumbing.
//!
//! Every parallel unit of work (Monte Carlo drop, calibration run, oracle)
//! owns an independent ChaCha substream derived from the experiment seed and
//! a path of integer identifiers, so results are reproducible regardless of
//! scheduling.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::linalg::{CMat, CVec, C64};

/// SplitMix64 step; decorrelates nearby seed/path values.
fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent substream for `(seed, path)`, e.g. `substream(seed, &[drop])`.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha12Rng {
    let mut state = seed;
    let mut key = [0u8; 32];
    let mut word = splitmix(&mut state);
    for id in path {
        state ^= id.wrapping_mul(0xd134_2543_de82_ef95).rotate_left(17);
        word = splitmix(&mut state);
    }
    for chunk in 0..4 {
        state ^= word.rotate_left(chunk * 13 + 1);
        let w = splitmix(&mut state);
        key[chunk as usize * 8..(chunk as usize + 1) * 8].copy_from_slice(&w.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// One CN(0, 1) sample (unit total variance, i.i.d. real/imag parts).
pub fn complex_gaussian<R: Rng>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_gaussian_vec<R: Rng>(rng: &mut R, n: usize) -> CVec {
    DVector::from_fn(n, |_, _| complex_gaussian(rng))
}

pub fn complex_gaussian_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| complex_gaussian(rng))
}

/// Draws CN(0, C) as C^{1/2}·w given the Hermitian square root of C.
pub fn correlated_gaussian<R: Rng>(sqrt_cov: &CMat, rng: &mut R) -> CVec {
    sqrt_cov * complex_gaussian_vec(rng, sqrt_cov.ncols())
}
