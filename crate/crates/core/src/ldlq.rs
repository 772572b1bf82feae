//! Data-aware quantization: block LDLQ with error feedback.
//!
//! Rows are processed first to last in blocks (1 for NUQ, 2 for VQ, one full
//! trellis run of 256 rows for TCQ and half-TCQ). Before block `k` is
//! quantized, its rows are adjusted by the feedback term
//! `sum_{p < r0} L[j][p] * E[p]` where `H = L D L^T` is the LDL factorization
//! of the proxy Hessian and `E` the accumulated quantization error of earlier
//! blocks. With `H = I` the feedback vanishes and the packed output is
//! byte-identical to the data-free path.

use crate::codebooks::TrellisConfig;
use crate::engines::{check_codebook, nuq_rtn, quantize_columns, vq_rtn};
use crate::error::{QpalError, Result};
use crate::exec;
use crate::incoherence::IncoherenceState;
use crate::store::{CodebookFile, CodebookPayload, QuantizedTensor, Scheme};
use crate::tensor::DenseMatrix;
use crate::trellis::tcq_encode;

/// LDL factorization of a symmetric PSD proxy Hessian: `H = L D L^T` with
/// `L` unit lower triangular and `D` nonnegative.
#[derive(Debug, Clone)]
pub struct HessianFactor {
    pub dim: usize,
    /// Row-major `dim x dim`, unit diagonal.
    pub l_unit_lower: Vec<f64>,
    pub d: Vec<f64>,
}

impl HessianFactor {
    pub fn identity(dim: usize) -> Self {
        let mut l = vec![0.0; dim * dim];
        for i in 0..dim {
            l[i * dim + i] = 1.0;
        }
        Self { dim, l_unit_lower: l, d: vec![1.0; dim] }
    }

    /// Factor a symmetric PSD matrix (row-major `dim x dim`). Diagonal
    /// pivots below `-1e-8` are rejected; tiny negatives are clamped to zero
    /// and their `L` column zeroed, so semidefinite inputs are accepted
    /// without NaNs.
    pub fn factor(h: &[f64], dim: usize) -> Result<Self> {
        if h.len() != dim * dim {
            return Err(QpalError::DimMismatch(format!(
                "Hessian has {} entries, expected {}",
                h.len(),
                dim * dim
            )));
        }
        let mut l = vec![0.0f64; dim * dim];
        let mut d = vec![0.0f64; dim];
        for j in 0..dim {
            let mut dj = h[j * dim + j];
            for p in 0..j {
                dj -= l[j * dim + p] * l[j * dim + p] * d[p];
            }
            if dj < -1e-8 {
                return Err(QpalError::NonPsdHessian { index: j, value: dj });
            }
            let dj = dj.max(0.0);
            d[j] = dj;
            l[j * dim + j] = 1.0;
            for i in j + 1..dim {
                if dj == 0.0 {
                    l[i * dim + j] = 0.0;
                    continue;
                }
                let mut v = h[i * dim + j];
                for p in 0..j {
                    v -= l[i * dim + p] * l[j * dim + p] * d[p];
                }
                l[i * dim + j] = v / dj;
            }
        }
        Ok(Self { dim, l_unit_lower: l, d })
    }

    /// `L D L^T`, for verification.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0;
                for p in 0..=i.min(j) {
                    v += self.l_unit_lower[i * n + p] * self.l_unit_lower[j * n + p] * self.d[p];
                }
                out[i * n + j] = v;
            }
        }
        out
    }
}

fn block_rows(scheme: Scheme) -> usize {
    match scheme {
        Scheme::Nuq => 1,
        Scheme::Vq2 => 2,
        // Trellis runs span 256 rows of a column, so feedback is applied at
        // run granularity.
        Scheme::Tcq | Scheme::HalfTcq => 256,
    }
}

/// Quantize `m` block-sequentially with Hessian-weighted error feedback.
/// The packed container uses the same canonical code order as
/// [`crate::engines::quantize_matrix`].
pub fn block_ldlq(
    m: &DenseMatrix,
    hessian: &HessianFactor,
    scheme: Scheme,
    bits_x4: u8,
    codebook: &CodebookFile,
    state: Option<&IncoherenceState>,
) -> Result<QuantizedTensor> {
    let (rows, cols) = (m.rows(), m.cols());
    if hessian.dim != rows {
        return Err(QpalError::DimMismatch(format!(
            "Hessian dim {} != matrix rows {rows}",
            hessian.dim
        )));
    }
    check_codebook(scheme, bits_x4, codebook)?;
    if hessian.d.iter().any(|&v| v < 0.0) {
        return Err(QpalError::NonPsdHessian {
            index: hessian.d.iter().position(|&v| v < 0.0).unwrap(),
            value: hessian.d.iter().copied().find(|&v| v < 0.0).unwrap(),
        });
    }
    let block = block_rows(scheme);
    if rows % block != 0 {
        return Err(QpalError::PartitionMismatch(format!(
            "{rows} rows are not divisible by the {scheme:?} block size {block}"
        )));
    }

    let original: Vec<Vec<f32>> = (0..cols).map(|c| m.column(c)).collect();
    let mut adjusted: Vec<Vec<f32>> = vec![vec![0.0; rows]; cols];
    // E = reconstruction - original, per column.
    let mut err: Vec<Vec<f64>> = vec![vec![0.0; rows]; cols];

    let trellis_cfgs = match scheme {
        Scheme::Tcq | Scheme::HalfTcq => {
            let l = match &codebook.payload {
                CodebookPayload::Trellis { l, .. } => u32::from(*l),
                _ => unreachable!("checked above"),
            };
            match scheme {
                Scheme::Tcq => {
                    Some((TrellisConfig::new(l, 2, u32::from(bits_x4) / 2, 256, 9.min(l - 1))?, None))
                }
                _ => Some((
                    TrellisConfig::new(l, 2, u32::from(bits_x4 - 1) / 2, 256, 9.min(l - 1))?,
                    Some(TrellisConfig::new(l, 2, u32::from(bits_x4 + 1) / 2, 256, 9.min(l - 1))?),
                )),
            }
        }
        _ => None,
    };
    let trellis_lut: Vec<f32> = match &codebook.payload {
        CodebookPayload::Trellis { lut, .. } => lut.iter().flatten().copied().collect(),
        _ => Vec::new(),
    };

    for r0 in (0..rows).step_by(block) {
        let r1 = r0 + block;
        // Feedback + quantize, column-parallel; each column returns its
        // adjusted block and the block reconstruction.
        let results: Vec<(Vec<f32>, Vec<f32>)> = exec::map_indexed(cols, |c| {
            let mut adj = Vec::with_capacity(block);
            for j in r0..r1 {
                let mut acc = 0.0f64;
                let lrow = &hessian.l_unit_lower[j * rows..j * rows + r0];
                let ecol = &err[c][..r0];
                for (lv, ev) in lrow.iter().zip(ecol) {
                    acc += lv * ev;
                }
                adj.push((original[c][j] as f64 - acc) as f32);
            }
            let recon = match scheme {
                Scheme::Nuq => {
                    let lut = match &codebook.payload {
                        CodebookPayload::Lut1d { entries, .. } => entries,
                        _ => unreachable!(),
                    };
                    vec![nuq_rtn(adj[0], lut).reconstruction]
                }
                Scheme::Vq2 => {
                    let lut = match &codebook.payload {
                        CodebookPayload::Lut2d { entries, .. } => entries,
                        _ => unreachable!(),
                    };
                    let r = vq_rtn([adj[0], adj[1]], lut).reconstruction;
                    vec![r[0], r[1]]
                }
                Scheme::Tcq | Scheme::HalfTcq => {
                    let (cfg_lo, cfg_hi) = trellis_cfgs.as_ref().expect("trellis config");
                    let cfg = match (scheme, r0 < rows / 2) {
                        (Scheme::Tcq, _) => cfg_lo,
                        (_, true) => cfg_lo,
                        (_, false) => cfg_hi.as_ref().expect("half-TCQ high config"),
                    };
                    tcq_encode(&adj, cfg, &trellis_lut)
                        .expect("block matches trellis length")
                        .reconstruction
                }
            };
            (adj, recon)
        });
        for (c, (adj, recon)) in results.into_iter().enumerate() {
            for (offset, (&a, &rv)) in adj.iter().zip(&recon).enumerate() {
                let j = r0 + offset;
                adjusted[c][j] = a;
                err[c][j] = rv as f64 - original[c][j] as f64;
            }
        }
    }

    // Re-quantizing the adjusted columns reproduces exactly the codes chosen
    // block by block (the operators are deterministic), and shares the
    // canonical packing with the data-free path.
    quantize_columns(&adjusted, rows, scheme, bits_x4, codebook, state)
}

/// `trace(E^T H E)` for `E = reconstruction - original`; the quantity LDLQ
/// minimizes.
pub fn weighted_error(original: &DenseMatrix, reconstructed: &DenseMatrix, h: &[f64]) -> f64 {
    let n = original.rows();
    assert_eq!(h.len(), n * n);
    let cols = original.cols();
    let mut total = 0.0;
    for c in 0..cols {
        let e: Vec<f64> = (0..n)
            .map(|r| reconstructed.get(r, c) as f64 - original.get(r, c) as f64)
            .collect();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += h[i * n + j] * e[j];
            }
            total += e[i] * acc;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebooks::{build_nuq_codebook, build_vq_codebook};
    use crate::engines::{dequantize, quantize_matrix};
    use crate::rng::{chacha, gaussian_matrix};
    use rand::Rng;
    use std::sync::OnceLock;

    fn nuq2() -> &'static CodebookFile {
        static CB: OnceLock<CodebookFile> = OnceLock::new();
        CB.get_or_init(|| build_nuq_codebook(2, 50_000, 3).unwrap())
    }

    fn random_psd(n: usize, rng: &mut rand_chacha::ChaCha12Rng) -> Vec<f64> {
        // A^T A + 0.05 I keeps it comfortably PSD.
        let a: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0;
                for k in 0..n {
                    v += a[k * n + i] * a[k * n + j];
                }
                h[i * n + j] = v + if i == j { 0.05 } else { 0.0 };
            }
        }
        h
    }

    #[test]
    fn ldl_reconstructs() {
        let mut rng = chacha(8);
        let h = random_psd(12, &mut rng);
        let f = HessianFactor::factor(&h, 12).unwrap();
        let back = f.reconstruct();
        let scale: f64 = h.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in h.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-6 * scale, "{a} vs {b}");
        }
        assert!(f.d.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn ldl_rejects_indefinite() {
        let h = vec![1.0, 0.0, 0.0, -0.5];
        assert!(matches!(
            HessianFactor::factor(&h, 2),
            Err(QpalError::NonPsdHessian { index: 1, .. })
        ));
    }

    #[test]
    fn ldl_accepts_semidefinite() {
        // Rank-1: one zero eigenvalue.
        let h = vec![1.0, 1.0, 1.0, 1.0];
        let f = HessianFactor::factor(&h, 2).unwrap();
        assert!(f.d[1].abs() < 1e-12);
        let m = gaussian_matrix(2, 3, 4);
        let q = block_ldlq(&m, &f, Scheme::Nuq, 8, nuq2(), None).unwrap();
        let back = dequantize(&q, nuq2(), None).unwrap();
        assert!(back.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn identity_hessian_reduces_to_data_free_nuq_vq() {
        let m = gaussian_matrix(64, 6, 10);
        let id = HessianFactor::identity(64);
        let plain = quantize_matrix(&m, Scheme::Nuq, 8, nuq2(), None).unwrap();
        let ldlq = block_ldlq(&m, &id, Scheme::Nuq, 8, nuq2(), None).unwrap();
        assert_eq!(plain, ldlq);

        let vq = build_vq_codebook(8, 4_000, 5).unwrap();
        let plain = quantize_matrix(&m, Scheme::Vq2, 8, &vq, None).unwrap();
        let ldlq = block_ldlq(&m, &id, Scheme::Vq2, 8, &vq, None).unwrap();
        assert_eq!(plain, ldlq);
    }

    #[test]
    fn ldlq_usually_beats_plain_rtn_under_hessian_metric() {
        let cb = nuq2();
        let mut rng = chacha(77);
        let trials = 200;
        let mut wins = 0;
        for _ in 0..trials {
            let h = random_psd(16, &mut rng);
            let f = HessianFactor::factor(&h, 16).unwrap();
            let seed = rng.random::<u64>();
            let m = gaussian_matrix(16, 4, seed);
            let plain = dequantize(&quantize_matrix(&m, Scheme::Nuq, 8, cb, None).unwrap(), cb, None)
                .unwrap();
            let aware =
                dequantize(&block_ldlq(&m, &f, Scheme::Nuq, 8, cb, None).unwrap(), cb, None)
                    .unwrap();
            if weighted_error(&m, &aware, &h) <= weighted_error(&m, &plain, &h) {
                wins += 1;
            }
        }
        assert!(wins * 10 >= trials * 9, "LDLQ won only {wins}/{trials} trials");
    }

    #[test]
    fn dim_mismatch_rejected() {
        let m = gaussian_matrix(8, 2, 0);
        let id = HessianFactor::identity(9);
        assert!(matches!(
            block_ldlq(&m, &id, Scheme::Nuq, 8, nuq2(), None),
            Err(QpalError::DimMismatch(_))
        ));
    }
}
