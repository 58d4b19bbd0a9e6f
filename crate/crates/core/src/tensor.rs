use serde::{Deserialize, Serialize};

use crate::error::{GrkanError, Result};
use crate::real::{Precision, Real};

/// Shape of a `batch × seq × feature` activation tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape3 {
    pub batch: usize,
    pub seq: usize,
    pub feature: usize,
}

impl Shape3 {
    pub fn new(batch: usize, seq: usize, feature: usize) -> Self {
        Self { batch, seq, feature }
    }

    /// Number of `(batch, seq)` positions.
    pub fn rows(&self) -> usize {
        self.batch * self.seq
    }

    pub fn len(&self) -> usize {
        self.batch * self.seq * self.feature
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn checked_len(&self) -> Result<usize> {
        if self.batch == 0 || self.seq == 0 || self.feature == 0 {
            return Err(GrkanError::InvalidConfig(format!(
                "tensor dimensions must be positive, got {}x{}x{}",
                self.batch, self.seq, self.feature
            )));
        }
        self.batch
            .checked_mul(self.seq)
            .and_then(|v| v.checked_mul(self.feature))
            .ok_or(GrkanError::CountOverflow("tensor length"))
    }
}

/// Dense row-major `(batch, seq, feature)` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor<T> {
    shape: Shape3,
    data: Vec<T>,
}

impl<T: Real> ActivationTensor<T> {
    /// Builds a tensor, rejecting NaN and infinite entries.
    pub fn new(shape: Shape3, data: Vec<T>) -> Result<Self> {
        let tensor = Self::new_unchecked(shape, data)?;
        if let Some(pos) = tensor.data.iter().position(|v| !v.is_finite()) {
            return Err(GrkanError::NonFiniteInput(format!("tensor entry {pos} is {}", tensor.data[pos])));
        }
        Ok(tensor)
    }

    /// Builds a tensor checking only the length, for benchmark paths.
    pub fn new_unchecked(shape: Shape3, data: Vec<T>) -> Result<Self> {
        let len = shape.checked_len()?;
        if data.len() != len {
            return Err(GrkanError::LayoutMismatch(format!(
                "data length {} does not match shape {}x{}x{}",
                data.len(),
                shape.batch,
                shape.seq,
                shape.feature
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape3) -> Result<Self> {
        let len = shape.checked_len()?;
        Ok(Self { shape, data: vec![T::ZERO; len] })
    }

    pub fn from_fn(shape: Shape3, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        shape.checked_len()?;
        let mut data = Vec::with_capacity(shape.len());
        for b in 0..shape.batch {
            for s in 0..shape.seq {
                for f_idx in 0..shape.feature {
                    data.push(f(b, s, f_idx));
                }
            }
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn index(&self, b: usize, s: usize, f: usize) -> usize {
        (b * self.shape.seq + s) * self.shape.feature + f
    }

    pub fn get(&self, b: usize, s: usize, f: usize) -> T {
        self.data[self.index(b, s, f)]
    }

    /// One `(batch, seq)` position as a feature slice.
    pub fn row(&self, row: usize) -> &[T] {
        let d = self.shape.feature;
        &self.data[row * d..(row + 1) * d]
    }

    pub fn cast<U: Real>(&self) -> ActivationTensor<U> {
        ActivationTensor { shape: self.shape, data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dense row-major matrix, used for coefficient gradients and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::ZERO; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GrkanError::LayoutMismatch(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::ONE;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
