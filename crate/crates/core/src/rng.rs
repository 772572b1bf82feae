//! Seeded randomness.
//!
//! Two generators are used deliberately:
//!
//! - `SplitMix64` in counter mode for the incoherence sign diagonal. The
//!   mixing constants below are the reference ones (Steele et al.), so the
//!   diagonal is reproducible from the seed in any language.
//! - ChaCha12 for everything that only needs a deterministic stream inside
//!   this artifact (Gaussian samples, k-means init, test instances).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::tensor::DenseMatrix;

/// Reference SplitMix64 finalizer applied to `seed + (i+1)*GOLDEN`.
pub fn splitmix64(seed: u64, counter: u64) -> u64 {
    let mut z = seed.wrapping_add(counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The ±1 sign diagonal for a given seed; entry `i` is +1 when the top bit
/// of `splitmix64(seed, i)` is clear.
pub fn sign_diagonal(seed: u64, dim: usize) -> Vec<f32> {
    (0..dim)
        .map(|i| if splitmix64(seed, i as u64) >> 63 == 0 { 1.0 } else { -1.0 })
        .collect()
}

pub fn chacha(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// `n` i.i.d. standard normal samples from one sequential ChaCha stream.
pub fn standard_normal(seed: u64, n: usize) -> Vec<f32> {
    let mut rng = chacha(seed);
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

/// Row-major `rows x cols` matrix of i.i.d. N(0, 1) entries.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    DenseMatrix::new(rows, cols, standard_normal(seed, rows * cols))
        .expect("gaussian samples are finite")
}
