//! LSB-first bit packing for variable-width codes.
//!
//! Bit `j` of the stream lives in byte `j / 8` at bit position `j % 8`.
//! Within one code the least significant value bit is written first. Trailing
//! pad bits in the final byte are zero, so identical code streams produce
//! identical bytes.

use crate::error::{QpalError, Result};

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    buf: Vec<u8>,
    bit_len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push_bit(&mut self, bit: u8) {
        debug_assert!(bit <= 1);
        let byte = self.bit_len / 8;
        if byte == self.buf.len() {
            self.buf.push(0);
        }
        self.buf[byte] |= bit << (self.bit_len % 8);
        self.bit_len += 1;
    }

    /// Append the low `width` bits of `value`, LSB first.
    pub fn push_bits(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        debug_assert!(width == 64 || value >> width == 0, "value wider than declared width");
        for j in 0..width {
            self.push_bit(((value >> j) & 1) as u8);
        }
    }

    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    #[inline]
    pub fn read_bit(&mut self) -> Result<u8> {
        let byte = self.pos / 8;
        if byte >= self.bytes.len() {
            return Err(QpalError::TruncatedPayload {
                needed: (self.pos / 8 + 1) as u64,
                available: self.bytes.len() as u64,
            });
        }
        let bit = (self.bytes[byte] >> (self.pos % 8)) & 1;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, width: u32) -> Result<u64> {
        debug_assert!(width <= 64);
        let mut v = 0u64;
        for j in 0..width {
            v |= (self.read_bit()? as u64) << j;
        }
        Ok(v)
    }
}

/// Pack `codes[i]` at `widths[i]` bits each into one byte stream.
pub fn pack_bits(codes: &[u64], widths: &[u32]) -> Result<Vec<u8>> {
    if codes.len() != widths.len() {
        return Err(QpalError::LengthMismatch { expected: codes.len(), found: widths.len() });
    }
    let mut w = BitWriter::new();
    for (&code, &width) in codes.iter().zip(widths) {
        if width == 0 || width > 64 || (width < 64 && code >> width != 0) {
            return Err(QpalError::InvalidConfig(format!(
                "code {code:#x} does not fit in {width} bits"
            )));
        }
        w.push_bits(code, width);
    }
    Ok(w.into_bytes())
}

/// Inverse of [`pack_bits`] for the same width sequence.
pub fn unpack_bits(bytes: &[u8], widths: &[u32]) -> Result<Vec<u64>> {
    let mut r = BitReader::new(bytes);
    widths.iter().map(|&w| r.read_bits(w)).collect()
}
