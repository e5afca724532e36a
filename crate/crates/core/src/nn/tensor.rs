use crate::error::{Error, Result};

/// A flat vector of finite values (one spectrum, one logit vector, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor1D {
    values: Vec<f64>,
}

impl Tensor1D {
    /// Build from raw values, rejecting NaN/Inf.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("tensor contains non-finite values"));
        }
        Ok(Tensor1D { values })
    }

    pub fn zeros(len: usize) -> Self {
        Tensor1D { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Row-major features-by-bins activation block. A plain input spectrum is
/// the 1-row case.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2D { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::input(format!(
                "tensor shape {}x{} does not match {} values",
                rows,
                cols,
                values.len()
            )));
        }
        Ok(Tensor2D { rows, cols, values })
    }

    pub fn from_flat(values: Vec<f64>) -> Self {
        Tensor2D { rows: 1, cols: values.len(), values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    /// Stack rows into a single flat row (the "flat layer" operation).
    pub fn flattened(mut self) -> Tensor2D {
        self.cols *= self.rows;
        self.rows = 1;
        self
    }

    /// Reinterpret a flat block with a new shape; element count must match.
    pub fn reshaped(mut self, rows: usize, cols: usize) -> Tensor2D {
        assert_eq!(self.values.len(), rows * cols, "reshape element count mismatch");
        self.rows = rows;
        self.cols = cols;
        self
    }
}
