//! 2D attenuation image on a regular pixel grid.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A 2D image of `rows x cols` pixels with square pixels of side `pixel_size`,
/// stored row-major. The grid is centered at the origin: pixel (0, 0) sits in
/// the top-left corner (largest y, smallest x).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid<S> {
    rows: usize,
    cols: usize,
    pixel_size: S,
    values: Vec<S>,
}

impl<S: Real> ImageGrid<S> {
    pub fn new(rows: usize, cols: usize, pixel_size: S, values: Vec<S>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!("image must be nonempty, got {rows}x{cols}")));
        }
        if pixel_size <= S::zero() {
            return Err(Error::Config("pixel_size must be positive".into()));
        }
        if values.len() != rows * cols {
            return Err(Error::Config(format!(
                "image value length {} does not match {rows}x{cols}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("image contains non-finite values".into()));
        }
        Ok(Self { rows, cols, pixel_size, values })
    }

    pub fn zeros(rows: usize, cols: usize, pixel_size: S) -> Self {
        Self { rows, cols, pixel_size, values: vec![S::zero(); rows * cols] }
    }

    pub fn constant(rows: usize, cols: usize, pixel_size: S, value: S) -> Self {
        Self { rows, cols, pixel_size, values: vec![value; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pixel_size(&self) -> S {
        self.pixel_size
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> S {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: S) {
        self.values[row * self.cols + col] = v;
    }

    /// Physical width (x extent) of the grid.
    pub fn width(&self) -> S {
        S::from_f64_(self.cols as f64) * self.pixel_size
    }

    /// Physical height (y extent) of the grid.
    pub fn height(&self) -> S {
        S::from_f64_(self.rows as f64) * self.pixel_size
    }

    /// Physical center coordinate (x, y) of pixel (row, col).
    pub fn pixel_center(&self, row: usize, col: usize) -> (S, S) {
        let half = S::from_f64_(0.5);
        let x = (S::from_f64_(col as f64) + half) * self.pixel_size - self.width() * half;
        let y = self.height() * half - (S::from_f64_(row as f64) + half) * self.pixel_size;
        (x, y)
    }

    /// Half-diagonal of the physical support, measured from the origin.
    pub fn half_diagonal(&self) -> S {
        let half = S::from_f64_(0.5);
        ((self.width() * half).powi(2) + (self.height() * half).powi(2)).sqrt()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            pixel_size: self.pixel_size,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::Config("image shape mismatch".into()));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            pixel_size: self.pixel_size,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn dot(&self, other: &Self) -> S {
        self.values.iter().zip(&other.values).map(|(&a, &b)| a * b).sum()
    }

    pub fn norm(&self) -> S {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: S) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    /// Pixelwise max(v, 0).
    pub fn clip_nonnegative(&self) -> Self {
        self.map(|v| v.max(S::zero()))
    }

    pub fn min_value(&self) -> S {
        self.values.iter().fold(S::infinity(), |m, &v| m.min(v))
    }

    pub fn max_value(&self) -> S {
        self.values.iter().fold(S::neg_infinity(), |m, &v| m.max(v))
    }
}
