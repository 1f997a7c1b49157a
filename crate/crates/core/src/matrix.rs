use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix. Rows may be padded (`stride >= cols`).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    stride: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    /// Builds a matrix from tightly packed row-major data, rejecting non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::with_stride(rows, cols, cols, data)
    }

    pub fn with_stride(rows: usize, cols: usize, stride: usize, data: Vec<T>) -> Result<Self> {
        if stride < cols {
            return Err(Error::shape(format!("stride {stride} < cols {cols}")));
        }
        if data.len() != rows * stride {
            return Err(Error::shape(format!(
                "data length {} != rows {rows} x stride {stride}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite value at row {}, col {}",
                pos / stride.max(1),
                pos % stride.max(1)
            )));
        }
        Ok(Matrix {
            rows,
            cols,
            stride,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            stride: cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn row(&self, r: usize) -> &[T] {
        let start = r * self.stride;
        &self.data[start..start + self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let start = r * self.stride;
        &mut self.data[start..start + self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.stride + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.stride + c] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Copy without row padding.
    pub fn to_dense(&self) -> Vec<T> {
        (0..self.rows).flat_map(|r| self.row(r).iter().copied()).collect()
    }

    pub fn max_abs(&self) -> T {
        (0..self.rows)
            .flat_map(|r| self.row(r).iter())
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}
