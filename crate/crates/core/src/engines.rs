//! Quantization and dequantization kernels.
//!
//! Matrices are partitioned down columns: scalars for NUQ, row pairs for VQ,
//! and length-256 row runs for TCQ. Codes are packed column-major, within
//! each column in row-partition order. Half-TCQ splits the rows in half,
//! encodes the low half at `b - 0.25` bits and the high half at `b + 0.25`
//! bits, and stores the two byte streams back to back (low first, each
//! independently padded).

use crate::bitpack::{BitReader, BitWriter};
use crate::codebooks::TrellisConfig;
use crate::error::{QpalError, Result};
use crate::exec;
use crate::incoherence::{degaussianize, IncoherenceState};
use crate::store::{half_tcq_boundary, CodebookFile, CodebookPayload, QuantizedTensor, Scheme};
use crate::tensor::DenseMatrix;
use crate::trellis::{tcq_decode, tcq_encode};

/// Result of scalar round-to-nearest against a sorted 1D LUT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtnScalar {
    pub code: u32,
    pub reconstruction: f32,
    pub sq_error: f64,
}

/// Result of 2D round-to-nearest against a 2D LUT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtnVector {
    pub code: u32,
    pub reconstruction: [f32; 2],
    pub sq_error: f64,
}

/// Nearest entry of a sorted LUT; exact ties go to the smaller index.
pub fn nuq_rtn(v: f32, lut: &[f32]) -> RtnScalar {
    debug_assert!(!lut.is_empty());
    let i = lut.partition_point(|&e| e < v);
    let code = if i == 0 {
        0
    } else if i == lut.len() {
        lut.len() - 1
    } else {
        let d_lo = (v as f64 - lut[i - 1] as f64).abs();
        let d_hi = (lut[i] as f64 - v as f64).abs();
        if d_lo <= d_hi {
            i - 1
        } else {
            i
        }
    };
    let rec = lut[code];
    RtnScalar { code: code as u32, reconstruction: rec, sq_error: (v as f64 - rec as f64).powi(2) }
}

/// Nearest 2D entry by squared Euclidean distance; ties go to the smaller
/// index.
pub fn vq_rtn(v: [f32; 2], lut: &[[f32; 2]]) -> RtnVector {
    debug_assert!(!lut.is_empty());
    let mut best = f64::INFINITY;
    let mut code = 0usize;
    for (i, e) in lut.iter().enumerate() {
        let dx = v[0] as f64 - e[0] as f64;
        let dy = v[1] as f64 - e[1] as f64;
        let d = dx * dx + dy * dy;
        if d < best {
            best = d;
            code = i;
        }
    }
    RtnVector { code: code as u32, reconstruction: lut[code], sq_error: best }
}

/// Per-column code payloads in canonical (column, row-partition) order.
enum ColumnCodes {
    Fixed { codes: Vec<u32>, width: u32 },
    /// Concatenated trellis bit strings for the column's runs.
    Bits(Vec<u8>),
}

/// Validate that a codebook payload matches a container scheme and width.
pub(crate) fn check_codebook(scheme: Scheme, bits_x4: u8, codebook: &CodebookFile) -> Result<()> {
    scheme.check_width(bits_x4)?;
    match (&codebook.payload, scheme) {
        (CodebookPayload::Lut1d { bits, .. }, Scheme::Nuq) => {
            if u32::from(*bits) * 4 != u32::from(bits_x4) {
                return Err(QpalError::ConfigMismatch(format!(
                    "1D LUT is {} bits but container declares {} quarter-bits",
                    bits, bits_x4
                )));
            }
            Ok(())
        }
        (CodebookPayload::Lut2d { index_bits, .. }, Scheme::Vq2) => {
            if u32::from(*index_bits) * 2 != u32::from(bits_x4) {
                return Err(QpalError::ConfigMismatch(format!(
                    "2D LUT indexes {} bits but container declares {} quarter-bits",
                    index_bits, bits_x4
                )));
            }
            Ok(())
        }
        (CodebookPayload::Trellis { v, .. }, Scheme::Tcq | Scheme::HalfTcq) => {
            if *v != 2 {
                return Err(QpalError::ConfigMismatch("trellis containers need V = 2".into()));
            }
            Ok(())
        }
        _ => Err(QpalError::ConfigMismatch(format!(
            "codebook kind does not match scheme {scheme:?}"
        ))),
    }
}

fn trellis_tables(codebook: &CodebookFile) -> Result<(u32, Vec<f32>)> {
    match &codebook.payload {
        CodebookPayload::Trellis { l, lut, .. } => {
            Ok((u32::from(*l), lut.iter().flatten().copied().collect()))
        }
        _ => Err(QpalError::ConfigMismatch("expected a trellis codebook".into())),
    }
}

/// Trellis configs for a container width: one for TCQ, the (low, high) pair
/// for half-TCQ.
fn container_configs(
    scheme: Scheme,
    bits_x4: u8,
    l: u32,
    tlut_bits_hint: u32,
) -> Result<(TrellisConfig, Option<TrellisConfig>)> {
    match scheme {
        Scheme::Tcq => {
            let cfg = TrellisConfig::new(l, 2, u32::from(bits_x4) / 2, 256, tlut_bits_hint)?;
            Ok((cfg, None))
        }
        Scheme::HalfTcq => {
            let lo = TrellisConfig::new(l, 2, u32::from(bits_x4 - 1) / 2, 256, tlut_bits_hint)?;
            let hi = TrellisConfig::new(l, 2, u32::from(bits_x4 + 1) / 2, 256, tlut_bits_hint)?;
            Ok((lo, Some(hi)))
        }
        _ => unreachable!("only trellis schemes"),
    }
}

fn check_partitions(scheme: Scheme, rows: usize) -> Result<()> {
    let ok = match scheme {
        Scheme::Nuq => true,
        Scheme::Vq2 => rows % 2 == 0,
        Scheme::Tcq => rows % 256 == 0,
        Scheme::HalfTcq => rows % 2 == 0 && (rows / 2) % 256 == 0,
    };
    if ok {
        Ok(())
    } else {
        Err(QpalError::PartitionMismatch(format!(
            "{rows} rows cannot be partitioned for {scheme:?} (units: VQ 2, TCQ 256, half-TCQ 512)"
        )))
    }
}

fn scales_from_state(
    state: Option<&IncoherenceState>,
    rows: usize,
    cols: usize,
) -> Result<(Vec<f32>, Option<u64>)> {
    match state {
        Some(st) => {
            if st.dim != rows || st.scales.len() != cols {
                return Err(QpalError::DimMismatch(format!(
                    "incoherence state is {}x{}, matrix is {rows}x{cols}",
                    st.dim,
                    st.scales.len()
                )));
            }
            Ok((st.scales.clone(), Some(st.seed)))
        }
        None => Ok((vec![1.0; cols], None)),
    }
}

/// Data-free quantization of a column-standardized matrix. When `state` is
/// supplied (the output of `gaussianize`), its seed and scales are recorded
/// in the container so [`dequantize`] can restore the original matrix.
pub fn quantize_matrix(
    m: &DenseMatrix,
    scheme: Scheme,
    bits_x4: u8,
    codebook: &CodebookFile,
    state: Option<&IncoherenceState>,
) -> Result<QuantizedTensor> {
    let columns = exec::map_indexed(m.cols(), |c| m.column(c));
    quantize_columns(&columns, m.rows(), scheme, bits_x4, codebook, state)
}

/// Quantize pre-gathered columns (shared with the block-LDLQ wrapper so both
/// produce byte-identical containers for identical inputs).
pub(crate) fn quantize_columns(
    columns: &[Vec<f32>],
    rows: usize,
    scheme: Scheme,
    bits_x4: u8,
    codebook: &CodebookFile,
    state: Option<&IncoherenceState>,
) -> Result<QuantizedTensor> {
    let cols = columns.len();
    check_codebook(scheme, bits_x4, codebook)?;
    check_partitions(scheme, rows)?;
    let (scales, rotation_seed) = scales_from_state(state, rows, cols)?;

    let packed = match scheme {
        Scheme::Nuq => {
            let lut = match &codebook.payload {
                CodebookPayload::Lut1d { entries, .. } => entries,
                _ => unreachable!(),
            };
            let width = u32::from(bits_x4) / 4;
            let per_col = exec::map_indexed(cols, |c| {
                let codes: Vec<u32> = columns[c].iter().map(|&v| nuq_rtn(v, lut).code).collect();
                ColumnCodes::Fixed { codes, width }
            });
            pack_columns(&per_col, None)
        }
        Scheme::Vq2 => {
            let lut = match &codebook.payload {
                CodebookPayload::Lut2d { entries, .. } => entries,
                _ => unreachable!(),
            };
            let width = u32::from(bits_x4) / 2;
            let per_col = exec::map_indexed(cols, |c| {
                let codes: Vec<u32> = columns[c]
                    .chunks_exact(2)
                    .map(|p| vq_rtn([p[0], p[1]], lut).code)
                    .collect();
                ColumnCodes::Fixed { codes, width }
            });
            pack_columns(&per_col, None)
        }
        Scheme::Tcq => {
            let (l, lut) = trellis_tables(codebook)?;
            let (cfg, _) = container_configs(scheme, bits_x4, l, 9.min(l - 1))?;
            let runs_per_col = rows / cfg.t;
            let paths = exec::map_indexed(cols * runs_per_col, |idx| {
                let (c, run) = (idx / runs_per_col, idx % runs_per_col);
                let seg = &columns[c][run * cfg.t..(run + 1) * cfg.t];
                tcq_encode(seg, &cfg, &lut).map(|p| p.bits)
            });
            let mut per_col = Vec::with_capacity(cols);
            for c in 0..cols {
                let mut bits = Vec::new();
                for run in 0..runs_per_col {
                    bits.extend_from_slice(&paths[c * runs_per_col + run].as_ref().map_err(
                        clone_err,
                    )?);
                }
                per_col.push(ColumnCodes::Bits(bits));
            }
            pack_columns(&per_col, None)
        }
        Scheme::HalfTcq => {
            let (l, lut) = trellis_tables(codebook)?;
            let (cfg_lo, cfg_hi) = container_configs(scheme, bits_x4, l, 9.min(l - 1))?;
            let cfg_hi = cfg_hi.expect("half-TCQ has two configs");
            let half = rows / 2;
            let encode_half = |cfg: &TrellisConfig, offset: usize| -> Result<Vec<ColumnCodes>> {
                let runs_per_col = half / cfg.t;
                let paths = exec::map_indexed(cols * runs_per_col, |idx| {
                    let (c, run) = (idx / runs_per_col, idx % runs_per_col);
                    let start = offset + run * cfg.t;
                    let seg = &columns[c][start..start + cfg.t];
                    tcq_encode(seg, cfg, &lut).map(|p| p.bits)
                });
                let mut per_col = Vec::with_capacity(cols);
                for c in 0..cols {
                    let mut bits = Vec::new();
                    for run in 0..runs_per_col {
                        bits.extend_from_slice(
                            &paths[c * runs_per_col + run].as_ref().map_err(clone_err)?,
                        );
                    }
                    per_col.push(ColumnCodes::Bits(bits));
                }
                Ok(per_col)
            };
            let lo = encode_half(&cfg_lo, 0)?;
            let hi = encode_half(&cfg_hi, half)?;
            pack_columns(&lo, Some(&hi))
        }
    };

    let q = QuantizedTensor {
        scheme,
        bits_x4,
        rows,
        cols,
        codebook_id: codebook.id(),
        scales,
        rotation_seed,
        packed,
    };
    q.validate()?;
    Ok(q)
}

fn clone_err(e: &QpalError) -> QpalError {
    QpalError::InvalidConfig(e.to_string())
}

/// Pack per-column codes into the final byte stream; a second stream (the
/// half-TCQ high half) is padded independently and appended.
fn pack_columns(first: &[ColumnCodes], second: Option<&[ColumnCodes]>) -> Vec<u8> {
    let write = |cols: &[ColumnCodes]| -> Vec<u8> {
        let mut w = BitWriter::new();
        for col in cols {
            match col {
                ColumnCodes::Fixed { codes, width } => {
                    for &code in codes {
                        w.push_bits(u64::from(code), *width);
                    }
                }
                ColumnCodes::Bits(bits) => {
                    for &b in bits {
                        w.push_bit(b);
                    }
                }
            }
        }
        w.into_bytes()
    };
    let mut out = write(first);
    if let Some(second) = second {
        out.extend_from_slice(&write(second));
    }
    out
}

/// Invert the packing and LUT lookups; when `state` is supplied the
/// de-gaussianization (column rescale + inverse rotation) is applied too.
pub fn dequantize(
    q: &QuantizedTensor,
    codebook: &CodebookFile,
    state: Option<&IncoherenceState>,
) -> Result<DenseMatrix> {
    q.validate()?;
    check_codebook(q.scheme, q.bits_x4, codebook)?;
    check_partitions(q.scheme, q.rows)?;
    let (rows, cols) = (q.rows, q.cols);
    let mut m = DenseMatrix::zeros(rows, cols);

    match q.scheme {
        Scheme::Nuq => {
            let lut = match &codebook.payload {
                CodebookPayload::Lut1d { entries, .. } => entries,
                _ => unreachable!(),
            };
            let width = u32::from(q.bits_x4) / 4;
            let mut r = BitReader::new(&q.packed);
            for c in 0..cols {
                for row in 0..rows {
                    let code = r.read_bits(width)? as usize;
                    m.set(row, c, *lut.get(code).ok_or_else(code_oob)?);
                }
            }
        }
        Scheme::Vq2 => {
            let lut = match &codebook.payload {
                CodebookPayload::Lut2d { entries, .. } => entries,
                _ => unreachable!(),
            };
            let width = u32::from(q.bits_x4) / 2;
            let mut r = BitReader::new(&q.packed);
            for c in 0..cols {
                for pair in 0..rows / 2 {
                    let code = r.read_bits(width)? as usize;
                    let e = lut.get(code).ok_or_else(code_oob)?;
                    m.set(pair * 2, c, e[0]);
                    m.set(pair * 2 + 1, c, e[1]);
                }
            }
        }
        Scheme::Tcq => {
            let (l, lut) = trellis_tables(codebook)?;
            let (cfg, _) = container_configs(q.scheme, q.bits_x4, l, 9.min(l - 1))?;
            decode_trellis_stream(&q.packed, &cfg, &lut, rows, cols, 0, &mut m)?;
        }
        Scheme::HalfTcq => {
            let (l, lut) = trellis_tables(codebook)?;
            let (cfg_lo, cfg_hi) = container_configs(q.scheme, q.bits_x4, l, 9.min(l - 1))?;
            let cfg_hi = cfg_hi.expect("half-TCQ has two configs");
            let boundary = half_tcq_boundary(q.bits_x4, rows, cols);
            decode_trellis_stream(&q.packed[..boundary], &cfg_lo, &lut, rows / 2, cols, 0, &mut m)?;
            decode_trellis_stream(
                &q.packed[boundary..],
                &cfg_hi,
                &lut,
                rows / 2,
                cols,
                rows / 2,
                &mut m,
            )?;
        }
    }

    match state {
        Some(st) => degaussianize(&m, st),
        None => Ok(m),
    }
}

fn code_oob() -> QpalError {
    QpalError::CorruptContainer("code index out of LUT range".into())
}

fn decode_trellis_stream(
    bytes: &[u8],
    cfg: &TrellisConfig,
    lut: &[f32],
    span_rows: usize,
    cols: usize,
    row_offset: usize,
    m: &mut DenseMatrix,
) -> Result<()> {
    let mut r = BitReader::new(bytes);
    let runs_per_col = span_rows / cfg.t;
    for c in 0..cols {
        for run in 0..runs_per_col {
            let bits: Vec<u8> =
                (0..cfg.bit_len()).map(|_| r.read_bit()).collect::<Result<_>>()?;
            let values = tcq_decode(&bits, cfg, lut)?;
            for (j, &v) in values.iter().enumerate() {
                m.set(row_offset + run * cfg.t + j, c, v);
            }
        }
    }
    Ok(())
}

/// Declared and actual packed sizes agree up to byte padding.
pub fn packed_bits_accounting(q: &QuantizedTensor) -> (usize, f64) {
    let actual_bits = q.packed.len() * 8;
    let declared = q.rows as f64 * q.cols as f64 * f64::from(q.bits_x4) / 4.0;
    (actual_bits, declared)
}

pub use crate::store::expected_packed_len as packed_len_for;
