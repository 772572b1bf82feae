//! Quantized-artifact data model and bit-exact file formats.
//!
//! Three container formats, all little-endian with a 4-byte magic and a u32
//! version:
//!
//! - `QPTF` — dense f32 matrix (row-major),
//! - `QPQW` — quantized tensor: scheme, quarter-bit width, dims, codebook id,
//!   per-output-channel scales, optional rotation seed, packed code bits,
//! - `QPCB` — codebook: 1D LUT, 2D LUT, or trellis (tlut + expanded LUT).
//!
//! Pad bits are written as zero and ignored by readers, so every format
//! round-trips byte-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{QpalError, Result};
use crate::tensor::DenseMatrix;

pub const DENSE_MAGIC: [u8; 4] = *b"QPTF";
pub const QUANT_MAGIC: [u8; 4] = *b"QPQW";
pub const CODEBOOK_MAGIC: [u8; 4] = *b"QPCB";
const FORMAT_VERSION: u32 = 1;

/// Quantization scheme of a packed container.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Nuq,
    Vq2,
    Tcq,
    HalfTcq,
}

impl Scheme {
    pub fn tag(self) -> u8 {
        match self {
            Scheme::Nuq => 0,
            Scheme::Vq2 => 1,
            Scheme::Tcq => 2,
            Scheme::HalfTcq => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Scheme::Nuq),
            1 => Ok(Scheme::Vq2),
            2 => Ok(Scheme::Tcq),
            3 => Ok(Scheme::HalfTcq),
            other => Err(QpalError::CorruptContainer(format!("unknown scheme tag {other}"))),
        }
    }

    /// Supported bitwidths in quarter-bit units.
    pub fn supported_bits_x4(self) -> &'static [u8] {
        match self {
            Scheme::Nuq => &[8, 12, 16, 20, 24, 28, 32],
            Scheme::Vq2 => &[6, 8, 10, 12, 14, 16, 18, 20, 22, 24],
            Scheme::Tcq => &[6, 8, 10, 12, 14, 16, 18, 20],
            Scheme::HalfTcq => &[7, 9, 11, 13, 15, 17, 19],
        }
    }

    pub fn check_width(self, bits_x4: u8) -> Result<()> {
        if self.supported_bits_x4().contains(&bits_x4) {
            Ok(())
        } else {
            Err(QpalError::UnsupportedWidth { scheme: self, bits_x4 })
        }
    }
}

pub fn bits_from_x4(bits_x4: u8) -> f64 {
    bits_x4 as f64 / 4.0
}

/// Packed code bits plus everything needed to reconstruct: codebook
/// reference, per-output-channel scales, and the rotation seed when
/// incoherence processing was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub scheme: Scheme,
    pub bits_x4: u8,
    pub rows: usize,
    pub cols: usize,
    pub codebook_id: String,
    pub scales: Vec<f32>,
    pub rotation_seed: Option<u64>,
    pub packed: Vec<u8>,
}

/// Byte length of the packed payload: `ceil(n_elems * bits_x4 / 4)` bits
/// rounded up to bytes; half-TCQ stores two independently padded streams,
/// low-bitwidth half first.
pub fn expected_packed_len(scheme: Scheme, bits_x4: u8, rows: usize, cols: usize) -> Result<usize> {
    scheme.check_width(bits_x4)?;
    let bytes_for = |elems: usize, bx4: usize| (elems * bx4).div_ceil(4).div_ceil(8);
    match scheme {
        Scheme::HalfTcq => {
            if rows % 2 != 0 {
                return Err(QpalError::PartitionMismatch(format!(
                    "half-TCQ needs an even row count, got {rows}"
                )));
            }
            let half = rows / 2 * cols;
            Ok(bytes_for(half, bits_x4 as usize - 1) + bytes_for(half, bits_x4 as usize + 1))
        }
        _ => Ok(bytes_for(rows * cols, bits_x4 as usize)),
    }
}

/// Byte offset of the high-bitwidth stream inside a half-TCQ payload.
pub fn half_tcq_boundary(bits_x4: u8, rows: usize, cols: usize) -> usize {
    (rows / 2 * cols * (bits_x4 as usize - 1)).div_ceil(4).div_ceil(8)
}

impl QuantizedTensor {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(QpalError::DimensionOverflow {
                rows: self.rows as u64,
                cols: self.cols as u64,
            });
        }
        self.scheme.check_width(self.bits_x4)?;
        let expected = expected_packed_len(self.scheme, self.bits_x4, self.rows, self.cols)?;
        if self.packed.len() != expected {
            return Err(QpalError::CorruptContainer(format!(
                "packed length {} does not match expected {} bytes",
                self.packed.len(),
                expected
            )));
        }
        if self.scales.len() != self.cols {
            return Err(QpalError::CorruptContainer(format!(
                "scales length {} != cols {}",
                self.scales.len(),
                self.cols
            )));
        }
        if self.scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(QpalError::CorruptContainer("scales must be positive".into()));
        }
        Ok(())
    }

    /// Rebuild the incoherence state recorded in the container, if any.
    pub fn incoherence_state(&self) -> Option<crate::incoherence::IncoherenceState> {
        self.rotation_seed.map(|seed| crate::incoherence::IncoherenceState {
            seed,
            dim: self.rows,
            scales: self.scales.clone(),
        })
    }
}

/// Codebook payload variants.
#[derive(Debug, Clone, PartialEq)]
pub enum CodebookPayload {
    /// Sorted 1D LUT with `2^bits` entries.
    Lut1d { bits: u8, entries: Vec<f32> },
    /// 2D LUT with `2^index_bits` centroid pairs (`index_bits = 2b`).
    Lut2d { index_bits: u8, entries: Vec<[f32; 2]> },
    /// Hybrid trellis LUT: clustered `tlut` plus the expanded `2^l x 2` table.
    Trellis { l: u8, v: u8, tlut_bits: u8, tlut: Vec<[f32; 2]>, lut: Vec<[f32; 2]> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookFile {
    pub payload: CodebookPayload,
    pub build_seed: u64,
    pub sample_count: u64,
}

impl CodebookFile {
    pub fn kind_tag(&self) -> u8 {
        match self.payload {
            CodebookPayload::Lut1d { .. } => 0,
            CodebookPayload::Lut2d { .. } => 1,
            CodebookPayload::Trellis { .. } => 2,
        }
    }

    /// A short deterministic identifier for container references.
    pub fn id(&self) -> String {
        match &self.payload {
            CodebookPayload::Lut1d { bits, .. } => {
                format!("lut1d-b{}-s{}-n{}", bits, self.build_seed, self.sample_count)
            }
            CodebookPayload::Lut2d { index_bits, .. } => {
                format!("lut2d-i{}-s{}-n{}", index_bits, self.build_seed, self.sample_count)
            }
            CodebookPayload::Trellis { l, tlut_bits, .. } => {
                format!("trellis-L{}-t{}-s{}-n{}", l, tlut_bits, self.build_seed, self.sample_count)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.payload {
            CodebookPayload::Lut1d { bits, entries } => {
                if *bits == 0 || *bits > 8 || entries.len() != 1usize << bits {
                    return Err(QpalError::CorruptContainer(format!(
                        "1D LUT with {} entries for {} bits",
                        entries.len(),
                        bits
                    )));
                }
                if entries.iter().any(|e| !e.is_finite()) {
                    return Err(QpalError::CorruptContainer("non-finite LUT entry".into()));
                }
                if entries.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(QpalError::CorruptContainer(
                        "1D LUT entries must be strictly increasing".into(),
                    ));
                }
            }
            CodebookPayload::Lut2d { index_bits, entries } => {
                if *index_bits < 3 || *index_bits > 24 || entries.len() != 1usize << index_bits {
                    return Err(QpalError::CorruptContainer(format!(
                        "2D LUT with {} entries for {} index bits",
                        entries.len(),
                        index_bits
                    )));
                }
                if entries.iter().flatten().any(|e| !e.is_finite()) {
                    return Err(QpalError::CorruptContainer("non-finite LUT entry".into()));
                }
            }
            CodebookPayload::Trellis { l, v, tlut_bits, tlut, lut } => {
                if *v == 0 || *l == 0 || *l > 24 || *tlut_bits as u32 > *l as u32 - 1 {
                    return Err(QpalError::CorruptContainer("invalid trellis parameters".into()));
                }
                if tlut.len() != 1usize << tlut_bits || lut.len() != 1usize << l {
                    return Err(QpalError::CorruptContainer(format!(
                        "trellis tables {}x2/{}x2 do not match tlut_bits={} l={}",
                        tlut.len(),
                        lut.len(),
                        tlut_bits,
                        l
                    )));
                }
                if tlut.iter().chain(lut.iter()).flatten().any(|e| !e.is_finite()) {
                    return Err(QpalError::CorruptContainer("non-finite LUT entry".into()));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Little-endian primitives
// ---------------------------------------------------------------------------

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.inner.write_all(&[v])?)
    }
    fn u16(&mut self, v: u16) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }
    fn f32s(&mut self, vs: impl IntoIterator<Item = f32>) -> Result<()> {
        for v in vs {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        Ok(self.inner.write_all(b)?)
    }
}

struct Reader<R: Read> {
    inner: R,
    consumed: u64,
}

impl<R: Read> Reader<R> {
    fn new(inner: R) -> Self {
        Self { inner, consumed: 0 }
    }

    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut filled = 0;
        while filled < buf.len() {
            let n = self.inner.read(&mut buf[filled..])?;
            if n == 0 {
                return Err(QpalError::TruncatedPayload {
                    needed: self.consumed + buf.len() as u64,
                    available: self.consumed + filled as u64,
                });
            }
            filled += n;
        }
        self.consumed += buf.len() as u64;
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.exact(&mut b)?;
        Ok(b[0])
    }
    fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.exact(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut raw = vec![0u8; n.checked_mul(4).ok_or(QpalError::DimensionOverflow {
            rows: n as u64,
            cols: 4,
        })?];
        self.exact(&mut raw)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let mut found = [0u8; 4];
        self.exact(&mut found)?;
        if found != expected {
            return Err(QpalError::BadMagic { expected, found });
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(QpalError::UnsupportedVersion(v));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Dense matrices (QPTF)
// ---------------------------------------------------------------------------

pub fn save_dense(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    let mut w = Writer { inner: BufWriter::new(File::create(path)?) };
    w.bytes(&DENSE_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u32(m.rows() as u32)?;
    w.u32(m.cols() as u32)?;
    w.f32s(m.data().iter().copied())?;
    w.inner.flush()?;
    Ok(())
}

pub fn load_dense(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let mut r = Reader::new(BufReader::new(File::open(path)?));
    r.magic(DENSE_MAGIC)?;
    r.version()?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if rows == 0 || cols == 0 || rows.checked_mul(cols).map_or(true, |n| n > u32::MAX as usize) {
        return Err(QpalError::DimensionOverflow { rows: rows as u64, cols: cols as u64 });
    }
    let data = r.f32s(rows * cols)?;
    // Bypass the finite check: round-tripping arbitrary stored bits (e.g.
    // -0.0) must be exact, and NaN payloads are rejected at construction
    // time elsewhere.
    DenseMatrix::new(rows, cols, data)
}

// ---------------------------------------------------------------------------
// Quantized containers (QPQW)
// ---------------------------------------------------------------------------

pub fn write_quantized(path: impl AsRef<Path>, q: &QuantizedTensor) -> Result<()> {
    q.validate()?;
    let mut w = Writer { inner: BufWriter::new(File::create(path)?) };
    w.bytes(&QUANT_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u8(q.scheme.tag())?;
    w.u8(q.bits_x4)?;
    w.u8(u8::from(q.rotation_seed.is_some()))?;
    w.u8(0)?;
    w.u32(q.rows as u32)?;
    w.u32(q.cols as u32)?;
    if let Some(seed) = q.rotation_seed {
        w.u64(seed)?;
    }
    let id = q.codebook_id.as_bytes();
    w.u16(id.len() as u16)?;
    w.bytes(id)?;
    w.f32s(q.scales.iter().copied())?;
    w.u64(q.packed.len() as u64)?;
    w.bytes(&q.packed)?;
    w.inner.flush()?;
    Ok(())
}

pub fn read_quantized(path: impl AsRef<Path>) -> Result<QuantizedTensor> {
    let mut r = Reader::new(BufReader::new(File::open(path)?));
    r.magic(QUANT_MAGIC)?;
    r.version()?;
    let scheme = Scheme::from_tag(r.u8()?)?;
    let bits_x4 = r.u8()?;
    let has_seed = r.u8()? != 0;
    let _reserved = r.u8()?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let rotation_seed = if has_seed { Some(r.u64()?) } else { None };
    let id_len = r.u16()? as usize;
    let mut id_raw = vec![0u8; id_len];
    r.exact(&mut id_raw)?;
    let codebook_id = String::from_utf8(id_raw)
        .map_err(|_| QpalError::CorruptContainer("codebook id is not UTF-8".into()))?;
    if rows == 0 || cols == 0 || rows.checked_mul(cols).map_or(true, |n| n > u32::MAX as usize) {
        return Err(QpalError::DimensionOverflow { rows: rows as u64, cols: cols as u64 });
    }
    let scales = r.f32s(cols)?;
    let packed_len = r.u64()? as usize;
    let mut packed = vec![0u8; packed_len];
    r.exact(&mut packed)?;
    let q = QuantizedTensor { scheme, bits_x4, rows, cols, codebook_id, scales, rotation_seed, packed };
    q.validate()?;
    Ok(q)
}

// ---------------------------------------------------------------------------
// Codebooks (QPCB)
// ---------------------------------------------------------------------------

pub fn write_codebook(path: impl AsRef<Path>, cb: &CodebookFile) -> Result<()> {
    cb.validate()?;
    let mut w = Writer { inner: BufWriter::new(File::create(path)?) };
    w.bytes(&CODEBOOK_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u8(cb.kind_tag())?;
    match &cb.payload {
        CodebookPayload::Lut1d { bits, .. } => {
            w.u8(*bits)?;
            w.u8(0)?;
            w.u8(0)?;
        }
        CodebookPayload::Lut2d { index_bits, .. } => {
            w.u8(*index_bits)?;
            w.u8(0)?;
            w.u8(0)?;
        }
        CodebookPayload::Trellis { l, v, tlut_bits, .. } => {
            w.u8(*l)?;
            w.u8(*v)?;
            w.u8(*tlut_bits)?;
        }
    }
    w.u64(cb.build_seed)?;
    w.u64(cb.sample_count)?;
    match &cb.payload {
        CodebookPayload::Lut1d { entries, .. } => {
            w.u32(entries.len() as u32)?;
            w.f32s(entries.iter().copied())?;
        }
        CodebookPayload::Lut2d { entries, .. } => {
            w.u32(entries.len() as u32)?;
            w.f32s(entries.iter().flatten().copied())?;
        }
        CodebookPayload::Trellis { tlut, lut, .. } => {
            w.u32(tlut.len() as u32)?;
            w.f32s(tlut.iter().flatten().copied())?;
            w.u32(lut.len() as u32)?;
            w.f32s(lut.iter().flatten().copied())?;
        }
    }
    w.inner.flush()?;
    Ok(())
}

pub fn read_codebook(path: impl AsRef<Path>) -> Result<CodebookFile> {
    let mut r = Reader::new(BufReader::new(File::open(path)?));
    r.magic(CODEBOOK_MAGIC)?;
    r.version()?;
    let kind = r.u8()?;
    let p0 = r.u8()?;
    let p1 = r.u8()?;
    let p2 = r.u8()?;
    let build_seed = r.u64()?;
    let sample_count = r.u64()?;
    let pairs = |r: &mut Reader<_>, n: usize| -> Result<Vec<[f32; 2]>> {
        Ok(r.f32s(n * 2)?.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    };
    let payload = match kind {
        0 => {
            let n = r.u32()? as usize;
            CodebookPayload::Lut1d { bits: p0, entries: r.f32s(n)? }
        }
        1 => {
            let n = r.u32()? as usize;
            CodebookPayload::Lut2d { index_bits: p0, entries: pairs(&mut r, n)? }
        }
        2 => {
            let tn = r.u32()? as usize;
            let tlut = pairs(&mut r, tn)?;
            let ln = r.u32()? as usize;
            let lut = pairs(&mut r, ln)?;
            CodebookPayload::Trellis { l: p0, v: p1, tlut_bits: p2, tlut, lut }
        }
        other => return Err(QpalError::CorruptContainer(format!("unknown codebook kind {other}"))),
    };
    let cb = CodebookFile { payload, build_seed, sample_count };
    cb.validate()?;
    Ok(cb)
}
