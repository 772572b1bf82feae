//! Distortion measurement, the Gaussian distortion-rate bound, closed-form
//! optimal fractional bit allocation, and the optimality-gap decomposition.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{QpalError, Result};
use crate::exec;
use crate::store::Scheme;
use crate::tensor::DenseMatrix;

/// Normalized squared Frobenius error `||Q(W) - W||^2 / ||W||^2`.
pub fn measure_distortion(original: &DenseMatrix, reconstructed: &DenseMatrix) -> Result<f64> {
    if original.rows() != reconstructed.rows() || original.cols() != reconstructed.cols() {
        return Err(QpalError::DimMismatch(format!(
            "{}x{} vs {}x{}",
            original.rows(),
            original.cols(),
            reconstructed.rows(),
            reconstructed.cols()
        )));
    }
    let n = original.data().len();
    let partials = exec::map_chunks(n, 1 << 16, |range| {
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in range {
            let a = original.data()[i] as f64;
            let b = reconstructed.data()[i] as f64;
            num += (b - a) * (b - a);
            den += a * a;
        }
        (num, den)
    });
    let (num, den) = partials.iter().fold((0.0, 0.0), |(n0, d0), &(n1, d1)| (n0 + n1, d0 + d1));
    if den == 0.0 {
        return Err(QpalError::InvalidConfig("original matrix has zero norm".into()));
    }
    Ok(num / den)
}

/// The Gaussian source floor `2^(-2 bits)` on expected normalized error.
pub fn rd_bound(bits: f64) -> f64 {
    2f64.powf(-2.0 * bits)
}

/// A layer's shape and sensitivity coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub d_in: u64,
    pub d_out: u64,
    pub sensitivity: f64,
}

impl LayerSpec {
    pub fn size(&self) -> f64 {
        self.d_in as f64 * self.d_out as f64
    }

    fn check(&self) -> Result<()> {
        if self.d_in == 0 || self.d_out == 0 {
            return Err(QpalError::DimensionOverflow { rows: self.d_in, cols: self.d_out });
        }
        if !(self.sensitivity >= 0.0) {
            return Err(QpalError::InvalidConfig(format!(
                "layer {}: sensitivity must be nonnegative, got {}",
                self.name, self.sensitivity
            )));
        }
        Ok(())
    }
}

/// Continuous optimal bitwidths and the water level that makes the budget
/// tight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationResult {
    pub bitwidths: Vec<f64>,
    pub water_level: f64,
    pub eta: f64,
    pub budget_used: f64,
    /// `sum_l a_l 2^(-2 b_l)`.
    pub objective: f64,
}

/// Water-filling closed form: `b_l = max(eta, offset_l + C)` with
/// `offset_l = ln(a_l / size_l) / (2 ln 2)`, `C` found by bisection so the
/// budget holds with equality. Layers with zero sensitivity are pinned at
/// `eta`.
pub fn allocate_bits(layers: &[LayerSpec], budget_bits: f64, eta: f64) -> Result<AllocationResult> {
    if layers.is_empty() {
        return Err(QpalError::InvalidConfig("no layers".into()));
    }
    if !(eta >= 0.0) {
        return Err(QpalError::InvalidConfig(format!("minimum bitwidth {eta} must be >= 0")));
    }
    for l in layers {
        l.check()?;
    }
    if layers.iter().all(|l| l.sensitivity == 0.0) {
        return Err(QpalError::InvalidConfig("at least one layer needs a_l > 0".into()));
    }
    let total_size: f64 = layers.iter().map(|l| l.size()).sum();
    if budget_bits < eta * total_size * (1.0 - 1e-12) {
        return Err(QpalError::InfeasibleBudget(format!(
            "budget {budget_bits} bits < eta * total size = {}",
            eta * total_size
        )));
    }

    let offsets: Vec<Option<f64>> = layers
        .iter()
        .map(|l| {
            (l.sensitivity > 0.0).then(|| (l.sensitivity / l.size()).ln() / (2.0 * f64::ln(2.0)))
        })
        .collect();

    let budget_at = |c: f64| -> f64 {
        layers
            .iter()
            .zip(&offsets)
            .map(|(l, off)| match off {
                Some(off) => eta.max(off + c) * l.size(),
                None => eta * l.size(),
            })
            .sum()
    };

    // budget_at is continuous and nondecreasing in C; bracket, then bisect.
    // Below eta - max(offset) every layer is pinned at eta, so the low end is
    // feasible by the budget check above.
    let min_off = offsets.iter().flatten().fold(f64::INFINITY, |a, &b| a.min(b));
    let max_off = offsets.iter().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut lo = eta - max_off - 64.0;
    let mut hi = eta - min_off + 64.0;
    while budget_at(hi) < budget_bits {
        hi += 64.0;
        if hi > 1e6 {
            return Err(QpalError::InfeasibleBudget("budget beyond representable widths".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if budget_at(mid) < budget_bits {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);

    let bitwidths: Vec<f64> = layers
        .iter()
        .zip(&offsets)
        .map(|(_, off)| match off {
            Some(off) => eta.max(off + c),
            None => eta,
        })
        .collect();
    let budget_used: f64 =
        layers.iter().zip(&bitwidths).map(|(l, &b)| b * l.size()).sum();
    let objective: f64 = layers
        .iter()
        .zip(&bitwidths)
        .map(|(l, &b)| l.sensitivity * rd_bound(b))
        .sum();
    Ok(AllocationResult { bitwidths, water_level: c, eta, budget_used, objective })
}

/// One layer's contribution to the optimality gap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerGap {
    pub name: String,
    pub distortion: f64,
    pub bit_alloc: f64,
    pub total: f64,
}

/// Split of the shortfall versus the ideal continuous allocation into a
/// quantizer-quality term and a bitwidth-granularity term. `total_gap` is
/// defined as the sum of the two aggregates, so the identity holds exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub distortion_gap: f64,
    pub bit_alloc_gap: f64,
    pub total_gap: f64,
    pub per_layer: Vec<LayerGap>,
}

/// The discrete quantizer picked for one layer: its bitwidth and measured
/// normalized error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChosenQuantizer {
    pub bits: f64,
    pub measured_err: f64,
}

pub fn gap_report(
    chosen: &[ChosenQuantizer],
    layers: &[LayerSpec],
    allocation: &AllocationResult,
) -> Result<GapReport> {
    if chosen.len() != layers.len() || allocation.bitwidths.len() != layers.len() {
        return Err(QpalError::LengthMismatch { expected: layers.len(), found: chosen.len() });
    }
    let mut per_layer = Vec::with_capacity(layers.len());
    let mut distortion_gap = 0.0f64;
    let mut bit_alloc_gap = 0.0f64;
    for ((layer, ch), &b_star) in layers.iter().zip(chosen).zip(&allocation.bitwidths) {
        let a = layer.sensitivity;
        let d = a * (ch.measured_err - rd_bound(ch.bits));
        let g = a * (rd_bound(ch.bits) - rd_bound(b_star));
        per_layer.push(LayerGap { name: layer.name.clone(), distortion: d, bit_alloc: g, total: d + g });
        distortion_gap += d;
        bit_alloc_gap += g;
    }
    Ok(GapReport { distortion_gap, bit_alloc_gap, total_gap: distortion_gap + bit_alloc_gap, per_layer })
}

// ---------------------------------------------------------------------------
// Distortion cache
// ---------------------------------------------------------------------------

/// One cached measurement: the normalized error of a (scheme, width) pair on
/// a fresh Gaussian matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub scheme: Scheme,
    pub bits_x4: u8,
    pub err: f64,
    pub sample_dims: (usize, usize),
    pub seed: u64,
}

/// Persisted map from `scheme-bits_x4` to measured distortion, used for
/// data-free loss terms. The directory comes from `QPAL_CACHE_DIR` (default
/// `.qpal-cache`).
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
pub struct DistortionCache {
    pub entries: BTreeMap<String, CacheEntry>,
}

pub fn cache_dir() -> PathBuf {
    std::env::var_os("QPAL_CACHE_DIR").map(PathBuf::from).unwrap_or_else(|| ".qpal-cache".into())
}

fn cache_key(scheme: Scheme, bits_x4: u8) -> String {
    format!("{}-{}", serde_json::to_value(scheme).unwrap().as_str().unwrap(), bits_x4)
}

impl DistortionCache {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("distortion_cache.json");
        if !path.exists() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut payload = serde_json::to_string_pretty(self)?;
        payload.push('\n');
        std::fs::write(dir.join("distortion_cache.json"), payload)?;
        Ok(())
    }

    pub fn get(&self, scheme: Scheme, bits_x4: u8) -> Option<&CacheEntry> {
        self.entries.get(&cache_key(scheme, bits_x4))
    }

    pub fn put(&mut self, entry: CacheEntry) {
        self.entries.insert(cache_key(entry.scheme, entry.bits_x4), entry);
    }
}
