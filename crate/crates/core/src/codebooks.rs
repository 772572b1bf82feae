//! Gaussian-optimized codebook construction.
//!
//! - NUQ: 1D k-means on standard normal samples, `2^bits` sorted centroids.
//! - VQ: 2D k-means, `2^(2b)` centroid pairs.
//! - TCQ: hybrid trellis LUT — a small clustered `tlut` expanded to `2^L x 2`
//!   rows by `quantlut_sym`, then rescaled so the expanded table has unit
//!   per-coordinate second moment (the trellis targets a unit-variance
//!   source).

use crate::error::{QpalError, Result};
use crate::kmeans::{kmeans_1d, kmeans_2d, LloydParams};
use crate::rng::{chacha, splitmix64, standard_normal};
use crate::store::{CodebookFile, CodebookPayload};

/// Desk-scale default sample count for NUQ/VQ codebooks.
pub const DEFAULT_LUT_SAMPLES: usize = 1_000_000;
/// Sample count for the trellis tlut clustering.
pub const DEFAULT_TLUT_SAMPLES: usize = 1 << 20;

/// Parameters of a bitshift trellis quantizer: window of `l` bits sliding by
/// `s` bits per step, each window decoding `v` weights, over vectors of
/// length `t`. Effective bitwidth is `s / v` bits per weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrellisConfig {
    pub l: u32,
    pub v: u32,
    pub s: u32,
    pub t: usize,
    pub tlut_bits: u32,
}

impl TrellisConfig {
    pub fn new(l: u32, v: u32, s: u32, t: usize, tlut_bits: u32) -> Result<Self> {
        let cfg = Self { l, v, s, t, tlut_bits };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.l > 24 {
            return Err(QpalError::InvalidConfig(format!("window length {} out of range", self.l)));
        }
        if self.s == 0 || self.s > self.l {
            return Err(QpalError::InvalidConfig(format!(
                "shift {} must be in 1..={}",
                self.s, self.l
            )));
        }
        if self.v == 0 || self.t == 0 || self.t % self.v as usize != 0 {
            return Err(QpalError::InvalidConfig(format!(
                "trellis length {} must be a positive multiple of vector size {}",
                self.t, self.v
            )));
        }
        if self.tlut_bits >= self.l {
            return Err(QpalError::InvalidConfig(format!(
                "tlut_bits {} must be < window length {}",
                self.tlut_bits, self.l
            )));
        }
        Ok(())
    }

    /// The production configuration for a supported TCQ width: `L=16`,
    /// `V=2`, `T=256`, `s = 2b`, and tlut_bits 9 (b <= 4), 10 (b = 4.5) or
    /// 11 (b = 5).
    pub fn standard(bits_x4: u8) -> Result<Self> {
        crate::store::Scheme::Tcq.check_width(bits_x4)?;
        let s = bits_x4 as u32 / 2;
        Self::new(16, 2, s, 256, standard_tlut_bits(bits_x4))
    }

    pub fn n_steps(&self) -> usize {
        self.t / self.v as usize
    }

    /// Total encoded bits for one length-`t` vector.
    pub fn bit_len(&self) -> usize {
        self.s as usize * self.n_steps()
    }

    pub fn bits_per_weight(&self) -> f64 {
        self.s as f64 / self.v as f64
    }
}

/// tlut size for a supported TCQ width (shared by the half-TCQ widths, which
/// use the table of their upper half).
pub fn standard_tlut_bits(bits_x4: u8) -> u32 {
    match bits_x4 {
        18 => 10,
        20 => 11,
        _ => 9,
    }
}

/// The hybrid codebook expansion: index `i` maps through the quadratic hash
/// `p = (i+1) * i` to a sign bit (bit 15 of `p`) and a `tlut` row, flipping
/// the first coordinate's sign. Constants 15 and 16 are part of the
/// construction and independent of `l`.
pub fn quantlut_sym(tlut: &[[f32; 2]], l: u32, tlut_bits: u32) -> Vec<[f32; 2]> {
    assert_eq!(tlut.len(), 1 << tlut_bits, "tlut size must match tlut_bits");
    let mask = (1u64 << tlut_bits) - 1;
    (0..1u64 << l)
        .map(|i| {
            let p = (i + 1) * i;
            let sign = if (p >> 15) & 1 == 1 { -1.0f32 } else { 1.0 };
            let idx = ((p >> (16 - tlut_bits - 1)) & mask) as usize;
            [sign * tlut[idx][0], tlut[idx][1]]
        })
        .collect()
}

fn check_samples(n_samples: usize, clusters: usize) -> Result<()> {
    if n_samples < clusters * 64 {
        return Err(QpalError::InvalidConfig(format!(
            "{n_samples} samples is too few for {clusters} clusters (need at least {})",
            clusters * 64
        )));
    }
    Ok(())
}

/// Run 2D k-means `restarts` times with derived seeds, keeping the lowest
/// objective (first on ties).
fn best_of_2d(
    xs: &[f32],
    ys: &[f32],
    k: usize,
    seed: u64,
    restarts: usize,
    params: LloydParams,
) -> crate::kmeans::Kmeans2d {
    let mut best: Option<crate::kmeans::Kmeans2d> = None;
    for r in 0..restarts.max(1) {
        let mut rng = chacha(splitmix64(seed, r as u64));
        let run = kmeans_2d(xs, ys, k, &mut rng, params);
        run.trace.assert_monotone();
        if best.as_ref().map_or(true, |b| run.trace.objective < b.trace.objective) {
            best = Some(run);
        }
    }
    best.unwrap()
}

/// Build the `2^bits`-entry NUQ LUT (bits 1..=8; container formats accept
/// 2..=8, the 1-bit table exists for analysis).
pub fn build_nuq_codebook(bits: u8, n_samples: usize, seed: u64) -> Result<CodebookFile> {
    if bits == 0 || bits > 8 {
        return Err(QpalError::InvalidConfig(format!("NUQ bits {bits} out of 1..=8")));
    }
    let k = 1usize << bits;
    check_samples(n_samples, k)?;
    let mut samples = standard_normal(seed, n_samples);
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rng = chacha(splitmix64(seed, 0));
    let res = kmeans_1d(&samples, k, &mut rng, LloydParams::default());
    res.trace.assert_monotone();
    let mut entries: Vec<f32> = res.centroids.iter().map(|&c| c as f32).collect();
    entries.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cb = CodebookFile {
        payload: CodebookPayload::Lut1d { bits, entries },
        build_seed: seed,
        sample_count: n_samples as u64,
    };
    cb.validate()?;
    Ok(cb)
}

/// Build the `2^(2b) x 2` VQ LUT for an even quarter-bit width in 6..=24.
pub fn build_vq_codebook(bits_x4: u8, n_samples: usize, seed: u64) -> Result<CodebookFile> {
    build_vq_codebook_with(bits_x4, n_samples, seed, 2)
}

pub fn build_vq_codebook_with(
    bits_x4: u8,
    n_samples: usize,
    seed: u64,
    restarts: usize,
) -> Result<CodebookFile> {
    crate::store::Scheme::Vq2.check_width(bits_x4)?;
    let index_bits = bits_x4 / 2;
    let k = 1usize << index_bits;
    check_samples(n_samples, k)?;
    let raw = standard_normal(seed, n_samples * 2);
    let (xs, ys): (Vec<f32>, Vec<f32>) = raw.chunks_exact(2).map(|c| (c[0], c[1])).unzip();
    let res = best_of_2d(&xs, &ys, k, seed, restarts, LloydParams::default());
    let entries: Vec<[f32; 2]> =
        res.cx.iter().zip(&res.cy).map(|(&x, &y)| [x as f32, y as f32]).collect();
    let cb = CodebookFile {
        payload: CodebookPayload::Lut2d { index_bits, entries },
        build_seed: seed,
        sample_count: n_samples as u64,
    };
    cb.validate()?;
    Ok(cb)
}

/// Build the trellis codebook for `cfg`: cluster 2D normal samples into
/// `2^tlut_bits` centroids, expand with [`quantlut_sym`], and rescale both
/// tables so the expanded LUT has unit per-coordinate second moment under
/// uniform index sampling.
pub fn build_trellis_lut(cfg: &TrellisConfig, n_samples: usize, seed: u64) -> Result<CodebookFile> {
    cfg.validate()?;
    if cfg.v != 2 {
        return Err(QpalError::InvalidConfig(
            "trellis codebook construction is defined for V = 2".into(),
        ));
    }
    let k = 1usize << cfg.tlut_bits;
    check_samples(n_samples, k)?;
    let raw = standard_normal(seed, n_samples * 2);
    let (xs, ys): (Vec<f32>, Vec<f32>) = raw.chunks_exact(2).map(|c| (c[0], c[1])).unzip();
    let res = best_of_2d(&xs, &ys, k, seed, 1, LloydParams::default());
    let mut tlut: Vec<[f32; 2]> =
        res.cx.iter().zip(&res.cy).map(|(&x, &y)| [x as f32, y as f32]).collect();

    // Per-coordinate second moment of the expanded table (the sign flip does
    // not change it), then rescale tlut and re-expand so both stay consistent.
    let expanded = quantlut_sym(&tlut, cfg.l, cfg.tlut_bits);
    let n = expanded.len() as f64;
    for coord in 0..2 {
        let ms: f64 = expanded.iter().map(|e| (e[coord] as f64).powi(2)).sum::<f64>() / n;
        if ms > 0.0 {
            let alpha = (1.0 / ms.sqrt()) as f32;
            for row in tlut.iter_mut() {
                row[coord] *= alpha;
            }
        }
    }
    let lut = quantlut_sym(&tlut, cfg.l, cfg.tlut_bits);

    let cb = CodebookFile {
        payload: CodebookPayload::Trellis {
            l: cfg.l as u8,
            v: cfg.v as u8,
            tlut_bits: cfg.tlut_bits as u8,
            tlut,
            lut,
        },
        build_seed: seed,
        sample_count: n_samples as u64,
    };
    cb.validate()?;
    Ok(cb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lut1d_entries(cb: &CodebookFile) -> &[f32] {
        match &cb.payload {
            CodebookPayload::Lut1d { entries, .. } => entries,
            _ => panic!("expected 1D LUT"),
        }
    }

    #[test]
    fn one_bit_nuq_matches_closed_form() {
        // The 2-level Lloyd fixed point for N(0,1) is +-sqrt(2/pi).
        let cb = build_nuq_codebook(1, 200_000, 11).unwrap();
        let e = lut1d_entries(&cb);
        let target = (2.0 / std::f64::consts::PI).sqrt();
        assert!((e[0] as f64 + target).abs() < 0.01, "lo {}", e[0]);
        assert!((e[1] as f64 - target).abs() < 0.01, "hi {}", e[1]);
    }

    #[test]
    fn nuq_codebook_is_symmetric() {
        let cb = build_nuq_codebook(3, 400_000, 5).unwrap();
        let e = lut1d_entries(&cb);
        for i in 0..e.len() {
            let mirrored = -e[e.len() - 1 - i];
            assert!((e[i] - mirrored).abs() < 1e-2, "entry {i}: {} vs {}", e[i], mirrored);
        }
    }

    #[test]
    fn vq_1_5_bit_has_eight_centroids() {
        let cb = build_vq_codebook(6, 2_000, 3).unwrap();
        match cb.payload {
            CodebookPayload::Lut2d { index_bits, ref entries } => {
                assert_eq!(index_bits, 3);
                assert_eq!(entries.len(), 8);
            }
            _ => panic!("expected 2D LUT"),
        }
    }

    #[test]
    fn rebuild_is_bitwise_deterministic() {
        let a = build_vq_codebook(8, 50_000, 42).unwrap();
        let b = build_vq_codebook(8, 50_000, 42).unwrap();
        assert_eq!(a, b);
        let ta = build_trellis_lut(&TrellisConfig::new(10, 2, 4, 64, 6).unwrap(), 40_000, 7)
            .unwrap();
        let tb = build_trellis_lut(&TrellisConfig::new(10, 2, 4, 64, 6).unwrap(), 40_000, 7)
            .unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn quantlut_sym_hand_traces() {
        let tlut: Vec<[f32; 2]> = (0..512).map(|i| [i as f32, 1000.0 + i as f32]).collect();
        let lut = quantlut_sym(&tlut, 16, 9);
        assert_eq!(lut.len(), 1 << 16);
        // i = 0: p = 0, sign +1, idx 0.
        assert_eq!(lut[0], [tlut[0][0], tlut[0][1]]);
        // i = 181: p = 182*181 = 32942, bit 15 set, idx = (32942 >> 6) & 511 = 2.
        assert_eq!(lut[181], [-tlut[2][0], tlut[2][1]]);
    }

    #[test]
    fn quantlut_sym_signs_are_balanced() {
        let tlut: Vec<[f32; 2]> = (0..512).map(|i| [1.0 + i as f32, 0.0]).collect();
        let lut = quantlut_sym(&tlut, 16, 9);
        let negatives = lut.iter().filter(|e| e[0] < 0.0).count();
        let frac = negatives as f64 / lut.len() as f64;
        assert!((frac - 0.5).abs() < 0.02, "negative fraction {frac}");
    }

    #[test]
    fn standard_configs() {
        let c2 = TrellisConfig::standard(8).unwrap();
        assert_eq!((c2.l, c2.v, c2.s, c2.t, c2.tlut_bits), (16, 2, 4, 256, 9));
        assert_eq!(TrellisConfig::standard(18).unwrap().tlut_bits, 10);
        assert_eq!(TrellisConfig::standard(20).unwrap().tlut_bits, 11);
        assert!(TrellisConfig::standard(9).is_err());
    }

    #[test]
    fn trellis_lut_has_unit_second_moment() {
        let cfg = TrellisConfig::new(12, 2, 4, 256, 8).unwrap();
        let cb = build_trellis_lut(&cfg, 50_000, 9).unwrap();
        match cb.payload {
            CodebookPayload::Trellis { ref lut, .. } => {
                assert_eq!(lut.len(), 1 << 12);
                for coord in 0..2 {
                    let ms: f64 = lut.iter().map(|e| (e[coord] as f64).powi(2)).sum::<f64>()
                        / lut.len() as f64;
                    assert!((ms - 1.0).abs() < 1e-3, "coord {coord} second moment {ms}");
                }
            }
            _ => panic!("expected trellis payload"),
        }
    }
}
