//! Incoherence processing: randomized Hadamard rotation along the input
//! dimension with per-output-channel scaling.
//!
//! The forward transform is `(1/sqrt(n)) * H * D * W` where `H` is the
//! Walsh-Hadamard matrix on the row dimension and `D` a seed-derived ±1
//! diagonal ([`crate::rng::sign_diagonal`]). `gaussianize` additionally
//! normalizes every rotated column to unit standard deviation (divisor `n`),
//! recording the removed scales so the transform is invertible.

use crate::error::{QpalError, Result};
use crate::exec;
use crate::rng::sign_diagonal;
use crate::tensor::DenseMatrix;

/// Everything needed to undo `gaussianize`: the sign-diagonal seed, the
/// (power-of-two) row dimension, and the per-output-channel scales.
#[derive(Debug, Clone, PartialEq)]
pub struct IncoherenceState {
    pub seed: u64,
    pub dim: usize,
    pub scales: Vec<f32>,
}

/// In-place fast Walsh-Hadamard transform (unnormalized butterflies).
pub(crate) fn fwht_in_place(v: &mut [f32]) {
    let n = v.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in (0..n).step_by(h * 2) {
            for i in block..block + h {
                let a = v[i];
                let b = v[i + h];
                v[i] = a + b;
                v[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

fn check_pow2(rows: usize) -> Result<()> {
    if !rows.is_power_of_two() {
        return Err(QpalError::NonPowerOfTwoDim(rows));
    }
    Ok(())
}

fn transform_columns(
    m: &DenseMatrix,
    per_column: impl Fn(usize, &mut Vec<f32>) + Sync,
) -> DenseMatrix {
    let (rows, cols) = (m.rows(), m.cols());
    let columns = exec::map_indexed(cols, |c| {
        let mut col = m.column(c);
        per_column(c, &mut col);
        col
    });
    let mut out = DenseMatrix::zeros(rows, cols);
    for (c, col) in columns.iter().enumerate() {
        out.set_column(c, col);
    }
    out
}

/// `(1/sqrt(rows)) * H * D * m`: orthogonal, norm-preserving.
pub fn randomized_hadamard(m: &DenseMatrix, seed: u64) -> Result<DenseMatrix> {
    check_pow2(m.rows())?;
    let signs = sign_diagonal(seed, m.rows());
    let inv_sqrt = 1.0 / (m.rows() as f32).sqrt();
    Ok(transform_columns(m, |_, col| {
        for (x, s) in col.iter_mut().zip(&signs) {
            *x *= s;
        }
        fwht_in_place(col);
        for x in col.iter_mut() {
            *x *= inv_sqrt;
        }
    }))
}

/// Exact inverse of [`randomized_hadamard`]: `D * H * (1/sqrt(rows)) * m`.
pub fn inverse_hadamard(m: &DenseMatrix, seed: u64) -> Result<DenseMatrix> {
    check_pow2(m.rows())?;
    let signs = sign_diagonal(seed, m.rows());
    let inv_sqrt = 1.0 / (m.rows() as f32).sqrt();
    Ok(transform_columns(m, |_, col| {
        fwht_in_place(col);
        for (x, s) in col.iter_mut().zip(&signs) {
            *x *= s * inv_sqrt;
        }
    }))
}

/// Rotate along the input dimension and normalize each column to unit
/// empirical standard deviation (biased, divisor `rows`). Returns the
/// normalized matrix and the state required to invert the transform.
pub fn gaussianize(m: &DenseMatrix, seed: u64) -> Result<(DenseMatrix, IncoherenceState)> {
    check_pow2(m.rows())?;
    for c in 0..m.cols() {
        if m.column(c).iter().all(|&x| x == 0.0) {
            return Err(QpalError::ZeroColumn(c));
        }
    }
    let rotated = randomized_hadamard(m, seed)?;
    let rows = m.rows() as f64;
    let mut scales = vec![0.0f32; m.cols()];
    let mut out = rotated.clone();
    for c in 0..m.cols() {
        let col = rotated.column(c);
        let mean: f64 = col.iter().map(|&x| x as f64).sum::<f64>() / rows;
        let var: f64 = col.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / rows;
        let std = var.sqrt() as f32;
        scales[c] = std;
        let inv = 1.0 / std;
        let normalized: Vec<f32> = col.iter().map(|&x| x * inv).collect();
        out.set_column(c, &normalized);
    }
    Ok((out, IncoherenceState { seed, dim: m.rows(), scales }))
}

/// Undo [`gaussianize`]: restore the column scales, then invert the rotation.
pub fn degaussianize(m: &DenseMatrix, state: &IncoherenceState) -> Result<DenseMatrix> {
    if m.rows() != state.dim || state.scales.len() != m.cols() {
        return Err(QpalError::DimMismatch(format!(
            "state is for {}x{} but matrix is {}x{}",
            state.dim,
            state.scales.len(),
            m.rows(),
            m.cols()
        )));
    }
    let mut rescaled = m.clone();
    for c in 0..m.cols() {
        let s = state.scales[c];
        let col: Vec<f32> = m.column(c).iter().map(|&x| x * s).collect();
        rescaled.set_column(c, &col);
    }
    inverse_hadamard(&rescaled, state.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_matrix, splitmix64};

    fn max_rel_err(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        let num: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        num / a.frobenius_sq().sqrt()
    }

    #[test]
    fn rotation_inverts() {
        let m = gaussian_matrix(128, 9, 11);
        let r = randomized_hadamard(&m, 5).unwrap();
        let back = inverse_hadamard(&r, 5).unwrap();
        assert!(max_rel_err(&m, &back) < 1e-5);
    }

    #[test]
    fn h2_on_unit_vector() {
        // With a +1 sign on the first row, (1, 0)^T maps to (1/sqrt2, 1/sqrt2)^T.
        let seed = (0u64..).find(|&s| splitmix64(s, 0) >> 63 == 0).unwrap();
        let m = DenseMatrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        let r = randomized_hadamard(&m, seed).unwrap();
        let e = 1.0 / 2f32.sqrt();
        assert!((r.get(0, 0) - e).abs() < 1e-6 && (r.get(1, 0) - e).abs() < 1e-6);
    }

    #[test]
    fn column_norms_preserved() {
        let m = gaussian_matrix(256, 7, 3);
        let r = randomized_hadamard(&m, 99).unwrap();
        for c in 0..m.cols() {
            let n0: f64 = m.column(c).iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            let n1: f64 = r.column(c).iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n0 - n1).abs() / n0 < 1e-5, "col {c}: {n0} vs {n1}");
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        let m = DenseMatrix::zeros(3, 2);
        assert!(matches!(randomized_hadamard(&m, 0), Err(QpalError::NonPowerOfTwoDim(3))));
    }

    #[test]
    fn gaussianize_normalizes_and_records_sigma() {
        let sigma = 0.37f32;
        let mut m = gaussian_matrix(1024, 16, 21);
        for x in m.data_mut() {
            *x *= sigma;
        }
        let (g, state) = gaussianize(&m, 4).unwrap();
        let rows = g.rows() as f64;
        for c in 0..g.cols() {
            let col = g.column(c);
            let mean: f64 = col.iter().map(|&x| x as f64).sum::<f64>() / rows;
            let std =
                (col.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / rows).sqrt();
            assert!(std > 0.999 && std < 1.001, "col {c} std {std}");
            let rel = (state.scales[c] - sigma).abs() / sigma;
            assert!(rel < 0.05, "col {c} scale {} vs sigma {sigma}", state.scales[c]);
        }
    }

    #[test]
    fn gaussianize_idempotent_scales() {
        // Rotate, normalize, then gaussianize the result with the same seed:
        // all scales come out as 1.
        let m = gaussian_matrix(256, 8, 77);
        let (g, _) = gaussianize(&m, 13).unwrap();
        let undone = inverse_hadamard(&g, 13).unwrap();
        let (_, state2) = gaussianize(&undone, 13).unwrap();
        for &s in &state2.scales {
            assert!((s - 1.0).abs() < 1e-3, "scale {s}");
        }
    }

    #[test]
    fn degaussianize_roundtrip() {
        let m = gaussian_matrix(256, 8, 5);
        let (g, state) = gaussianize(&m, 17).unwrap();
        let back = degaussianize(&g, &state).unwrap();
        let max_abs = m
            .data()
            .iter()
            .zip(back.data())
            .map(|(&x, &y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(max_abs < 1e-4, "max abs err {max_abs}");
    }

    #[test]
    fn zero_column_rejected() {
        let mut m = gaussian_matrix(8, 3, 1);
        m.set_column(1, &[0.0; 8]);
        assert!(matches!(gaussianize(&m, 0), Err(QpalError::ZeroColumn(1))));
    }

    #[test]
    fn same_seed_same_diagonal() {
        assert_eq!(sign_diagonal(123, 512), sign_diagonal(123, 512));
        assert_ne!(sign_diagonal(123, 512), sign_diagonal(124, 512));
    }

    /// Kolmogorov-Smirnov statistic against N(0, 1).
    fn ks_statistic(values: &[f32]) -> f64 {
        let mut sorted: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len() as f64;
        let phi = |x: f64| 0.5 * (1.0 + erf(x / 2f64.sqrt()));
        sorted
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = phi(x);
                let lo = (cdf - i as f64 / n).abs();
                let hi = ((i + 1) as f64 / n - cdf).abs();
                lo.max(hi)
            })
            .fold(0.0, f64::max)
    }

    /// Abramowitz-Stegun 7.1.26, |err| < 1.5e-7.
    fn erf(x: f64) -> f64 {
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        sign * y
    }

    #[test]
    fn rotation_gaussianizes_spiky_matrix() {
        // One large outlier per column; after rotation + scaling the empirical
        // distribution is much closer to N(0, 1).
        let rows = 1024;
        let cols = 8;
        let mut m = DenseMatrix::zeros(rows, cols);
        let small = gaussian_matrix(rows, cols, 2);
        for c in 0..cols {
            let mut col: Vec<f32> =
                small.column(c).iter().map(|&x| 0.05 * x).collect();
            col[c * 31 % rows] = 40.0;
            m.set_column(c, &col);
        }
        let normalize = |mat: &DenseMatrix| -> Vec<f32> {
            let mut all = Vec::new();
            let n = mat.rows() as f64;
            for c in 0..mat.cols() {
                let col = mat.column(c);
                let mean: f64 = col.iter().map(|&x| x as f64).sum::<f64>() / n;
                let std =
                    (col.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
                all.extend(col.iter().map(|&x| ((x as f64 - mean) / std) as f32));
            }
            all
        };
        let (g, _) = gaussianize(&m, 6).unwrap();
        let ks_raw = ks_statistic(&normalize(&m));
        let ks_rot = ks_statistic(&normalize(&g));
        assert!(
            ks_rot < ks_raw,
            "rotation should reduce the KS statistic: raw {ks_raw}, rotated {ks_rot}"
        );
    }
}
