//! Small dense row-major matrices: just what the regime model, the noise
//! synthesiser and the recurrent cells need.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::from_vec",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `out = self * v`.
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = math::dot(self.row(i), v);
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(v, &mut out);
        out
    }

    /// `out += self * v`.
    pub fn mul_vec_add(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        for (i, o) in out.iter_mut().enumerate() {
            *o += math::dot(self.row(i), v);
        }
    }

    /// `out += selfᵀ * v`.
    pub fn mul_vec_transposed_add(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (i, vi) in v.iter().enumerate() {
            if *vi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
    }

    /// `self += a ⊗ b`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, ai) in a.iter().enumerate() {
            if *ai == 0.0 {
                continue;
            }
            for (x, bj) in self.row_mut(i).iter_mut().zip(b) {
                *x += ai * bj;
            }
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| if x.abs() > m { x.abs() } else { m })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Lower-triangular Cholesky factor `L` with `L Lᵀ = self`.
    pub fn cholesky(&self) -> Result<Matrix> {
        self.cholesky_with_jitter(0.0)
    }

    /// Cholesky of `self + jitter·I`. Pivots must be strictly positive.
    pub fn cholesky_with_jitter(&self, jitter: f64) -> Result<Matrix> {
        assert!(self.is_square(), "cholesky of non-square matrix");
        let n = self.rows;
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let (li, lj) = (i * n, j * n);
                let s = math::dot(&l.data[li..li + j], &l.data[lj..lj + j]);
                if i == j {
                    let d = self[(i, i)] + jitter - s;
                    if !(d > 0.0) {
                        return Err(Error::NotPositiveDefinite { pivot: i, value: d });
                    }
                    l.data[li + i] = math::sqrt(d);
                } else {
                    l.data[li + j] = (self[(i, j)] - s) / l.data[lj + j];
                }
            }
        }
        Ok(l)
    }

    /// Lower-triangular `L` with `L Lᵀ = self` for a symmetric PSD matrix.
    /// Pivots below `tol · max diag` are treated as exact zeros, so singular
    /// (including all-zero) covariances factor without jitter.
    pub fn psd_factor(&self, tol: f64) -> Result<Matrix> {
        assert!(self.is_square(), "psd_factor of non-square matrix");
        let n = self.rows;
        let max_diag = (0..n).fold(0.0f64, |m, i| m.max(self[(i, i)].abs()));
        let floor = tol * max_diag;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let s = math::dot(&l.data[j * n..j * n + j], &l.data[j * n..j * n + j]);
            let d = self[(j, j)] - s;
            if d < -floor.max(1e-300) {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            if d <= floor {
                continue;
            }
            let ljj = math::sqrt(d);
            l.data[j * n + j] = ljj;
            for i in j + 1..n {
                let s = math::dot(&l.data[i * n..i * n + j], &l.data[j * n..j * n + j]);
                l.data[i * n + j] = (self[(i, j)] - s) / ljj;
            }
        }
        Ok(l)
    }

    /// `L z` for a lower-triangular `L`, skipping the structural zeros.
    pub fn lower_mul_vec(&self, z: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| math::dot(&self.row(i)[..=i], &z[..=i]))
            .collect()
    }

    /// Spectral radius via normalised repeated squaring of `self`.
    ///
    /// Each iteration squares the running power and renormalises it, so after
    /// `k` iterations the estimate is `‖A^(2^k)‖^(2^-k)` (Gelfand's formula).
    /// Unlike vector power iteration this converges for defective matrices and
    /// complex-conjugate dominant pairs.
    pub fn spectral_radius(&self, iterations: usize) -> f64 {
        assert!(self.is_square(), "spectral radius of non-square matrix");
        let n0 = self.frobenius_norm();
        if n0 == 0.0 {
            return 0.0;
        }
        let mut b = self.scale(1.0 / n0);
        let mut log_c = math::ln(n0);
        let mut power = 1.0f64;
        for _ in 0..iterations {
            let sq = b.matmul(&b);
            let s = sq.frobenius_norm();
            if s == 0.0 {
                return 0.0;
            }
            b = sq.scale(1.0 / s);
            log_c = 2.0 * log_c + math::ln(s);
            power *= 2.0;
        }
        math::exp(log_c / power)
    }

    /// Solves the discrete Lyapunov equation `P = A P Aᵀ + Q` by the doubling
    /// iteration. Requires `ρ(A) < 1`.
    pub fn discrete_lyapunov(a: &Matrix, q: &Matrix) -> Matrix {
        let mut p = q.clone();
        let mut ak = a.clone();
        for _ in 0..64 {
            let next = p.add(&ak.matmul(&p).matmul(&ak.transpose()));
            let delta = next.add(&p.scale(-1.0)).max_abs();
            p = next;
            ak = ak.matmul(&ak);
            if delta <= 1e-15 * p.max_abs().max(1e-300) {
                break;
            }
        }
        p
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}
