//! Minimal dense row-major matrices over f32/f64.
//!
//! The toy transformer runs in 32-bit for forward benchmarks and 64-bit for
//! gradient checks, so everything numeric is generic over [`Scalar`]. Only
//! the handful of products backprop needs are provided.

use num_traits::{Float, NumAssign};

/// Floating-point element type of the toy model (f32 or f64).
pub trait Scalar:
    Float + NumAssign + Copy + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F> {
    pub rows: usize,
    pub cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix shape mismatch");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// self (m x k) * other (k x n) -> m x n.
    pub fn matmul(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!(self.cols, other.rows, "matmul inner dims");
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let out_row = out.row_mut(r);
            for (k, &a) in a_row.iter().enumerate() {
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// self (m x k) * other^T (n x k) -> m x n.
    pub fn matmul_bt(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!(self.cols, other.cols, "matmul_bt inner dims");
        let mut out = Mat::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let a_row = self.row(r);
            for n in 0..other.rows {
                let b_row = other.row(n);
                let mut acc = F::zero();
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out.set(r, n, acc);
            }
        }
        out
    }

    /// self^T (k x m) * other (k x n) -> m x n, accumulated into `out`.
    pub fn at_matmul_into(&self, other: &Mat<F>, out: &mut Mat<F>) {
        assert_eq!(self.rows, other.rows, "at_matmul outer dims");
        assert_eq!(out.rows, self.cols);
        assert_eq!(out.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (m, &a) in a_row.iter().enumerate() {
                let out_row = out.row_mut(m);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
    }

    pub fn add_assign(&mut self, other: &Mat<F>) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Copy a block of columns `[lo, hi)` out of every row.
    pub fn columns(&self, lo: usize, hi: usize) -> Mat<F> {
        assert!(lo <= hi && hi <= self.cols);
        Mat::from_fn(self.rows, hi - lo, |r, c| self.get(r, lo + c))
    }

    /// Copy rows `[lo, hi)`.
    pub fn rows_range(&self, lo: usize, hi: usize) -> Mat<F> {
        assert!(lo <= hi && hi <= self.rows);
        Mat::from_vec(
            hi - lo,
            self.cols,
            self.data[lo * self.cols..hi * self.cols].to_vec(),
        )
    }

    pub fn cast<G: Scalar>(&self) -> Mat<G> {
        Mat::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(|v| G::from_f64(v.as_f64())).collect(),
        )
    }
}
