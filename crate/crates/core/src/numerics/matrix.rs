//! Row-major dense f64 matrix.

use crate::error::CoreError;
use crate::Result;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

/// A dense matrix of 64-bit floats.
///
/// Immutable by convention once produced by an operation; construction
/// rejects non-finite entries so NaN/Inf cannot enter a computation
/// unnoticed.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    inner: Array2<f64>,
}

impl Matrix {
    /// Build from a row-major flat vector. Fails on length mismatch or
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::dim(
                "matrix",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        let inner = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| CoreError::dim("matrix", e.to_string()))?;
        let m = Matrix { inner };
        m.check_finite("matrix")?;
        Ok(m)
    }

    /// Build from nested rows (test convenience).
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(CoreError::dim("matrix", "ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(r, c, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            inner: Array2::zeros((rows, cols)),
        }
    }

    pub fn identity(n: usize) -> Self {
        Matrix {
            inner: Array2::eye(n),
        }
    }

    /// A 1x1 matrix holding one scalar.
    pub fn scalar(v: f64) -> Self {
        Matrix {
            inner: Array2::from_elem((1, 1), v),
        }
    }

    /// i.i.d. Gaussian entries with the given standard deviation.
    pub fn gaussian<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * std
            })
            .collect();
        Matrix {
            inner: Array2::from_shape_vec((rows, cols), data).expect("shape matches data"),
        }
    }

    pub(crate) fn from_array(inner: Array2<f64>) -> Self {
        Matrix { inner }
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.inner[(r, c)]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.inner[(r, c)] = v;
    }

    /// The single entry of a 1x1 matrix.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() requires a 1x1 matrix");
        self.inner[(0, 0)]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.inner.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.inner
    }

    pub fn as_array_mut(&mut self) -> &mut Array2<f64> {
        &mut self.inner
    }

    /// Row-major flat copy of the data.
    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.iter().copied().collect()
    }

    pub fn row_vec(&self, r: usize) -> Vec<f64> {
        self.inner.row(r).to_vec()
    }

    /// Extract one row as a 1xC matrix.
    pub fn row_matrix(&self, r: usize) -> Matrix {
        Matrix::from_array(self.inner.row(r).insert_axis(ndarray::Axis(0)).to_owned())
    }

    pub fn is_finite(&self) -> bool {
        self.inner.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if let Some((idx, v)) = self
            .inner
            .indexed_iter()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(CoreError::non_finite(
                op,
                format!("entry ({}, {}) = {v}", idx.0, idx.1),
            ));
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols() != other.rows() {
            return Err(CoreError::dim(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(Matrix::from_array(self.inner.dot(&other.inner)))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(CoreError::dim(
                "add",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(Matrix::from_array(&self.inner + &other.inner))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(CoreError::dim(
                "sub",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(Matrix::from_array(&self.inner - &other.inner))
    }

    pub fn elem_mul(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(CoreError::dim(
                "elem_mul",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(Matrix::from_array(&self.inner * &other.inner))
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix::from_array(&self.inner * c)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_array(self.inner.t().to_owned())
    }

    pub fn relu(&self) -> Matrix {
        Matrix::from_array(self.inner.mapv(|v| v.max(0.0)))
    }

    /// Sum of elementwise products; both operands must have equal shape.
    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(CoreError::dim(
                "dot",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(self
            .inner
            .iter()
            .zip(other.inner.iter())
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Numerically stable per-row softmax (max subtraction per row).
    pub fn row_softmax(&self) -> Matrix {
        let mut out = self.inner.clone();
        for mut row in out.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Matrix::from_array(out)
    }

    /// Per-row RMS normalization: x / sqrt(mean(x^2) + eps).
    pub fn row_rms_norm(&self, eps: f64) -> Matrix {
        let d = self.cols() as f64;
        let mut out = self.inner.clone();
        for mut row in out.rows_mut() {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / d;
            let inv = 1.0 / (ms + eps).sqrt();
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        Matrix::from_array(out)
    }

    /// Per-row L2 normalization with a floor on the norm.
    pub fn row_l2_normalize(&self, eps: f64) -> Matrix {
        let mut out = self.inner.clone();
        for mut row in out.rows_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        Matrix::from_array(out)
    }

    /// Frobenius norm.
    pub fn frob_norm(&self) -> f64 {
        self.inner.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.inner
            .iter()
            .zip(other.inner.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Bit-exact equality (distinguishes -0.0 from 0.0, unlike `==`).
    pub fn bits_eq(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
            && self
                .inner
                .iter()
                .zip(other.inner.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn from_vec_rejects_nan() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn matmul_shape_check() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn row_softmax_rows_sum_to_one() {
        let m = Matrix::from_rows(&[&[1.0, -2.0, 0.5], &[100.0, 100.0, 100.0]]).unwrap();
        let s = m.row_softmax();
        for r in 0..s.rows() {
            let sum: f64 = s.row_vec(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(s.row_vec(r).iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn row_softmax_symmetry() {
        let s = Matrix::from_rows(&[&[0.0, 0.0]]).unwrap().row_softmax();
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn l2_normalize_zero_row_is_finite() {
        let m = Matrix::zeros(1, 4).row_l2_normalize(1e-12);
        assert!(m.is_finite());
    }
}
