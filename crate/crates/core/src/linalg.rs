//! Small dense linear algebra: row-major matrices, Householder QR with
//! rank detection, triangular solves and a cyclic Jacobi eigensolver.
//!
//! Every estimator in the crate routes least squares through [`Qr`] so that
//! coefficients never come from inverting the normal equations.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};
#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;
use thiserror::Error;

/// Relative threshold below which a column's orthogonal remainder counts as
/// linearly dependent on the columns before it.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("column {column} is linearly dependent on earlier columns")]
    RankDeficient { column: usize },
    #[error("system has more columns ({cols}) than rows ({rows})")]
    Underdetermined { rows: usize, cols: usize },
    #[error("matrix is singular")]
    Singular,
}

#[derive(Debug, Clone, PartialEq)]
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
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix whose columns are the given slices.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let rows = columns.first().map_or(0, Vec::len);
        for c in columns {
            if c.len() != rows {
                return Err(LinalgError::DimensionMismatch {
                    expected: rows,
                    found: c.len(),
                });
            }
        }
        Ok(Self::from_fn(rows, columns.len(), |i, j| columns[j][i]))
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let base = i * other.cols;
                for (j, &b) in orow.iter().enumerate() {
                    out.data[base + j] += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if v.len() != self.cols {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                found: v.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ v`.
    pub fn tr_matvec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if v.len() != self.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.rows,
                found: v.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    /// `selfᵀ self`.
    pub fn gram(&self) -> Matrix {
        let mut g = Matrix::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..self.cols {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                for b in a..self.cols {
                    g.data[a * self.cols + b] += ra * r[b];
                }
            }
        }
        for a in 0..self.cols {
            for b in 0..a {
                g.data[a * self.cols + b] = g.data[b * self.cols + a];
            }
        }
        g
    }

    /// Horizontal concatenation.
    pub fn hcat(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.rows != other.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.rows,
                found: other.rows,
            });
        }
        Ok(Matrix::from_fn(self.rows, self.cols + other.cols, |i, j| {
            if j < self.cols {
                self[(i, j)]
            } else {
                other[(i, j - self.cols)]
            }
        }))
    }

    /// Keeps the listed columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, cols.len(), |i, j| self[(i, cols[j])])
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        Matrix::from_fn(rows.len(), self.cols, |i, j| self[(rows[i], j)])
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    // scaled to avoid overflow on large residual vectors
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = a.iter().map(|v| (v / scale) * (v / scale)).sum();
    scale * s.sqrt()
}

/// Householder QR factorization of a tall matrix, without pivoting.
///
/// Without pivoting the k-th diagonal of R is the norm of column k after
/// projecting out columns `0..k`, which lets a rank failure name the
/// offending column.
#[derive(Debug, Clone)]
pub struct Qr {
    // R in the upper triangle, Householder vectors (implicit unit head) below.
    packed: Matrix,
    betas: Vec<f64>,
}

impl Qr {
    pub fn new(a: &Matrix) -> Result<Self, LinalgError> {
        let (n, p) = (a.nrows(), a.ncols());
        if p > n {
            return Err(LinalgError::Underdetermined { rows: n, cols: p });
        }
        let col_norms: Vec<f64> = (0..p).map(|j| norm2(&a.column(j))).collect();
        let mut m = a.clone();
        let mut betas = vec![0.0; p];
        for k in 0..p {
            let x: Vec<f64> = (k..n).map(|i| m[(i, k)]).collect();
            let alpha_norm = norm2(&x);
            if col_norms[k] == 0.0 || alpha_norm <= RANK_TOL * col_norms[k] {
                return Err(LinalgError::RankDeficient { column: k });
            }
            let alpha = if x[0] >= 0.0 { -alpha_norm } else { alpha_norm };
            // v = x - alpha e1, scaled so v[0] = 1
            let v0 = x[0] - alpha;
            let mut v = x;
            v[0] = 1.0;
            for vi in v.iter_mut().skip(1) {
                *vi /= v0;
            }
            let vtv: f64 = v.iter().map(|t| t * t).sum();
            let beta = 2.0 / vtv;
            for j in (k + 1)..p {
                let mut s = 0.0;
                for (idx, vi) in v.iter().enumerate() {
                    s += vi * m[(k + idx, j)];
                }
                s *= beta;
                for (idx, vi) in v.iter().enumerate() {
                    m[(k + idx, j)] -= s * vi;
                }
            }
            m[(k, k)] = alpha;
            for (idx, vi) in v.iter().enumerate().skip(1) {
                m[(k + idx, k)] = *vi;
            }
            betas[k] = beta;
        }
        Ok(Self { packed: m, betas })
    }

    pub fn nrows(&self) -> usize {
        self.packed.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.packed.ncols()
    }

    fn reflect(&self, k: usize, y: &mut [f64]) {
        let n = self.nrows();
        let mut s = y[k];
        for i in (k + 1)..n {
            s += self.packed[(i, k)] * y[i];
        }
        s *= self.betas[k];
        y[k] -= s;
        for i in (k + 1)..n {
            y[i] -= s * self.packed[(i, k)];
        }
    }

    /// `Qᵀ y` for the full orthogonal factor (length n).
    pub fn qt_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = y.to_vec();
        for k in 0..self.ncols() {
            self.reflect(k, &mut out);
        }
        out
    }

    /// `Q v` for a length-n vector.
    pub fn q_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for k in (0..self.ncols()).rev() {
            self.reflect(k, &mut out);
        }
        out
    }

    pub fn r(&self) -> Matrix {
        let p = self.ncols();
        Matrix::from_fn(p, p, |i, j| if j >= i { self.packed[(i, j)] } else { 0.0 })
    }

    /// Least-squares coefficients.
    pub fn solve(&self, y: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if y.len() != self.nrows() {
            return Err(LinalgError::DimensionMismatch {
                expected: self.nrows(),
                found: y.len(),
            });
        }
        let qty = self.qt_mul(y);
        solve_upper(&self.r(), &qty[..self.ncols()])
    }

    /// `y - X β̂`, computed by zeroing the leading block of `Qᵀ y`.
    pub fn residuals(&self, y: &[f64]) -> Vec<f64> {
        let mut qty = self.qt_mul(y);
        for v in qty.iter_mut().take(self.ncols()) {
            *v = 0.0;
        }
        self.q_mul(&qty)
    }

    /// `(XᵀX)⁻¹ = R⁻¹ R⁻ᵀ`.
    pub fn unscaled_covariance(&self) -> Matrix {
        let rinv = upper_inverse(&self.r());
        let p = rinv.nrows();
        Matrix::from_fn(p, p, |i, j| {
            let start = i.max(j);
            (start..p).map(|k| rinv[(i, k)] * rinv[(j, k)]).sum()
        })
    }
}

pub fn solve_upper(r: &Matrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let p = r.ncols();
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = b[i];
        for j in (i + 1)..p {
            s -= r[(i, j)] * x[j];
        }
        let d = r[(i, i)];
        if d == 0.0 {
            return Err(LinalgError::Singular);
        }
        x[i] = s / d;
    }
    Ok(x)
}

/// Solves `Rᵀ x = b` for upper-triangular R.
pub fn solve_upper_transpose(r: &Matrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let p = r.ncols();
    let mut x = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for j in 0..i {
            s -= r[(j, i)] * x[j];
        }
        let d = r[(i, i)];
        if d == 0.0 {
            return Err(LinalgError::Singular);
        }
        x[i] = s / d;
    }
    Ok(x)
}

pub fn upper_inverse(r: &Matrix) -> Matrix {
    let p = r.ncols();
    let mut inv = Matrix::zeros(p, p);
    for j in 0..p {
        inv[(j, j)] = 1.0 / r[(j, j)];
        for i in (0..j).rev() {
            let mut s = 0.0;
            for k in (i + 1)..=j {
                s += r[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -s / r[(i, i)];
        }
    }
    inv
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix, LinalgError> {
    let n = a.nrows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 {
            return Err(LinalgError::Singular);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues and a matrix whose columns are the matching
/// orthonormal eigenvectors. Intended for the small (< 100) systems that
/// smoothing-parameter selection produces.
pub fn symmetric_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale: f64 = m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return (vec![0.0; n], v);
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[(i, i)]).collect(), v)
}
