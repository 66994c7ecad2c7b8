use std::ops::{Index, IndexMut};

use super::Real;
use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// Builds a matrix from row-major data. Fails if the length is wrong or
    /// any entry is not finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        super::check_finite(&data, "matrix")?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(format!("row {i} of length {cols}"), r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        // chunks_exact would yield nothing for cols == 0
        (0..self.rows).map(move |r| self.row(r))
    }

    /// `self · x` for a column vector `x`.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        self.iter_rows().map(|row| super::dot(row, x)).collect()
    }

    /// `out += selfᵀ · y`.
    pub fn add_matvec_transposed(&self, y: &[T], out: &mut [T]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (row, &yr) in self.iter_rows().zip(y) {
            if yr == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * yr;
            }
        }
    }

    /// `self += scale · y xᵀ`.
    pub fn add_outer(&mut self, y: &[T], x: &[T], scale: T) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        let cols = self.cols;
        for (r, &yr) in y.iter().enumerate() {
            let s = yr * scale;
            if s == T::zero() {
                continue;
            }
            for (o, &xc) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *o += s * xc;
            }
        }
    }

    /// `self += scale · other`.
    pub fn axpy(&mut self, scale: T, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}
