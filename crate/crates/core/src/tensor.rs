//! Dense row-major matrices of `f64`.
//!
//! Every value in the toolkit is two-dimensional: a vector is a `1 x n` row,
//! a scalar is `1 x 1`, and a mini-batch is `batch x width`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("tensor", format!("{} values for shape {rows}x{cols}", data.len())));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![value] }
    }

    /// A `1 x n` row vector.
    pub fn row(values: &[f64]) -> Self {
        Tensor { rows: 1, cols: values.len(), data: values.to_vec() }
    }

    /// An `n x 1` column vector.
    pub fn column(values: &[f64]) -> Self {
        Tensor { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("from_rows", format!("row {i} has {} values, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single value of a `1 x 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub(crate) fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("{}x{} times {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor { rows: n, cols: m, data: out })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Repeats a `1 x c`, `r x 1` or `1 x 1` tensor up to `rows x cols`.
    pub(crate) fn broadcast(&self, rows: usize, cols: usize) -> Result<Self> {
        let ok_rows = self.rows == rows || self.rows == 1;
        let ok_cols = self.cols == cols || self.cols == 1;
        if !ok_rows || !ok_cols {
            return Err(Error::shape("broadcast", format!("{}x{} to {rows}x{cols}", self.rows, self.cols)));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let sr = if self.rows == 1 { 0 } else { r };
            for c in 0..cols {
                let sc = if self.cols == 1 { 0 } else { c };
                data.push(self.data[sr * self.cols + sc]);
            }
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Sums down to `rows x cols`, the inverse shape rule of [`Tensor::broadcast`].
    pub(crate) fn sum_to(&self, rows: usize, cols: usize) -> Result<Self> {
        let ok_rows = rows == self.rows || rows == 1;
        let ok_cols = cols == self.cols || cols == 1;
        if !ok_rows || !ok_cols {
            return Err(Error::shape("sum_to", format!("{}x{} to {rows}x{cols}", self.rows, self.cols)));
        }
        let mut out = Self::zeros(rows, cols);
        for r in 0..self.rows {
            let tr = if rows == 1 { 0 } else { r };
            for c in 0..self.cols {
                let tc = if cols == 1 { 0 } else { c };
                out.data[tr * cols + tc] += self.data[r * self.cols + c];
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::new(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::new(3, 1, vec![1., 0., -1.]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[-2., -2.]);
        assert!(b.matmul(&b).is_err());
    }

    #[test]
    fn broadcast_and_sum_to_are_adjoint_shapes() {
        let b = Tensor::row(&[1., 2.]);
        let big = b.broadcast(3, 2).unwrap();
        assert_eq!(big.data(), &[1., 2., 1., 2., 1., 2.]);
        assert_eq!(big.sum_to(1, 2).unwrap().data(), &[3., 6.]);
        assert_eq!(big.sum_to(3, 1).unwrap().data(), &[3., 3., 3.]);
        assert_eq!(big.sum_to(1, 1).unwrap().item(), 9.);
        assert!(b.broadcast(3, 3).is_err());
    }

    #[test]
    fn bad_length_rejected() {
        assert!(Tensor::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Tensor::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
