//! Dense row-major f32 matrices.

use crate::error::{QpalError, Result};

/// A `rows x cols` matrix of finite f32 values, stored row-major.
///
/// `rows` is the input dimension of a weight matrix, `cols` the output
/// dimension; rotations and quantization partitions operate down columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows.checked_mul(cols).is_none() {
            return Err(QpalError::DimensionOverflow { rows: rows as u64, cols: cols as u64 });
        }
        if data.len() != rows * cols {
            return Err(QpalError::LengthMismatch { expected: rows * cols, found: data.len() });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(QpalError::NonFiniteData(i));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols]).expect("zero matrix is valid")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    /// Copy of column `c` (stride-`cols` gather).
    pub fn column(&self, c: usize) -> Vec<f32> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn set_column(&mut self, c: usize, values: &[f32]) {
        assert_eq!(values.len(), self.rows);
        for (r, &v) in values.iter().enumerate() {
            self.set(r, c, v);
        }
    }

    /// Squared Frobenius norm, accumulated in f64.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|&x| (x as f64) * (x as f64)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            DenseMatrix::new(0, 3, vec![]),
            Err(QpalError::DimensionOverflow { .. })
        ));
        assert!(matches!(
            DenseMatrix::new(2, 2, vec![0.0; 3]),
            Err(QpalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![0.0, f32::NAN]),
            Err(QpalError::NonFiniteData(1))
        ));
    }

    #[test]
    fn column_roundtrip() {
        let m = DenseMatrix::new(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(m.column(1), vec![1.0, 4.0]);
        assert_eq!(m.get(1, 2), 5.0);
    }
}
