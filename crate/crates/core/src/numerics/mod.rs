//! Dense column-major linear algebra used by every other module.
//!
//! Matrices are small (at most a few hundred columns), so everything here is
//! written for clarity and numerical robustness rather than raw throughput.

mod csv;
mod qr;
mod subsets;

pub use csv::{
    format_f64, labels_from_str, labels_to_string, matrix_from_str, matrix_to_string, read_labels,
    read_matrix, read_vector, write_labels, write_matrix, write_vector,
};
pub use qr::PivotedQr;
pub use subsets::{binomial, KSubsets};

use crate::error::{Error, Result};

/// Column norms at or below this are treated as degenerate samples.
pub const ZERO_COLUMN_TOL: f64 = 1e-12;

/// Pivots with `|R_kk| <= RANK_TOL * |R_11|` are dropped as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Dense real matrix stored column by column.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// Builds a matrix from column-major entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(Error::dims(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos % rows,
                col: pos / rows,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix from a list of equal-length columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::dims("columns have different lengths"));
        }
        Self::new(rows, cols, columns.concat())
    }

    /// Builds a matrix from a list of equal-length rows.
    pub fn from_rows(rows_in: &[Vec<f64>]) -> Result<Self> {
        let rows = rows_in.len();
        let cols = rows_in.first().map_or(0, Vec::len);
        if rows_in.iter().any(|r| r.len() != cols) {
            return Err(Error::dims("rows have different lengths"));
        }
        let mut data = vec![0.0; rows * cols];
        for (i, r) in rows_in.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                data[j * rows + i] = v;
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        let r = self.rows;
        &mut self.data[j * r..(j + 1) * r]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    /// `M v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matvec length mismatch");
        let mut out = vec![0.0; self.rows];
        for (j, &vj) in v.iter().enumerate() {
            if vj != 0.0 {
                axpy(vj, self.col(j), &mut out);
            }
        }
        out
    }

    /// `Mᵀ v`.
    pub fn tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "tr_matvec length mismatch");
        (0..self.cols).map(|j| dot(self.col(j), v)).collect()
    }

    /// `Aᵀ B`.
    pub fn tr_mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "tr_mul row mismatch");
        let mut out = Mat::zeros(self.cols, other.cols);
        for j in 0..other.cols {
            for i in 0..self.cols {
                out.set(i, j, dot(self.col(i), other.col(j)));
            }
        }
        out
    }

    pub fn select_columns(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for &j in idx {
            data.extend_from_slice(self.col(j));
        }
        Mat {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Mat) -> Result<Mat> {
        if self.rows != other.rows {
            return Err(Error::dims(format!(
                "cannot concatenate {} and {} rows",
                self.rows, other.rows
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Mat {
            rows: self.rows,
            cols: self.cols + other.cols,
            data,
        })
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn negate_column(&mut self, j: usize) {
        self.col_mut(j).iter_mut().for_each(|v| *v = -*v);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inner product with error-free transformations (TwoProduct + TwoSum),
/// accurate to roughly twice the working precision.
pub fn dot_compensated(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut sum = 0.0f64;
    let mut err = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let p = x * y;
        let p_err = x.mul_add(y, -p);
        let t = sum + p;
        let z = t - sum;
        err += (sum - (t - z)) + (p - z) + p_err;
        sum = t;
    }
    sum + err
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    // scaled to avoid overflow on large entries
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let s: f64 = v.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * s.sqrt()
}

pub fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Scales every column to unit Euclidean norm.
pub fn normalize_columns(m: &Mat) -> Result<Mat> {
    let mut out = m.clone();
    for j in 0..out.cols {
        let col = out.col_mut(j);
        let norm = dot_compensated(col, col).sqrt();
        if norm <= ZERO_COLUMN_TOL {
            return Err(Error::ZeroColumn { column: j, norm });
        }
        col.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

/// `MᵀM`, accumulated with compensated inner products and mirrored so the
/// result is exactly symmetric.
pub fn gram(m: &Mat) -> Mat {
    let n = m.cols;
    let mut g = Mat::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let v = dot_compensated(m.col(i), m.col(j));
            g.set(i, j, v);
            g.set(j, i, v);
        }
    }
    g
}

/// `argmin ‖Mβ − y‖₂` by Householder QR with column pivoting; coefficients on
/// pivots dropped for rank deficiency are zero.
pub fn least_squares(m: &Mat, y: &[f64]) -> Result<Vec<f64>> {
    if m.rows != y.len() {
        return Err(Error::dims(format!(
            "matrix has {} rows but vector has {} entries",
            m.rows,
            y.len()
        )));
    }
    Ok(PivotedQr::factor(m).solve_least_squares(y))
}

/// Entrywise `sign(v)·max(|v| − λ, 0)`.
pub fn soft_threshold(v: &[f64], lambda: f64) -> Vec<f64> {
    assert!(lambda >= 0.0, "threshold must be nonnegative");
    v.iter()
        .map(|&x| soft_threshold_scalar(x, lambda))
        .collect()
}

#[inline]
pub fn soft_threshold_scalar(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

/// Solves `A x = b` for symmetric positive definite `A` by Cholesky.
/// Returns `None` when a pivot is not positive.
pub fn cholesky_solve(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows;
    assert_eq!(a.cols, n);
    assert_eq!(b.len(), n);
    let l = cholesky(a)?;
    // forward: L z = b
    let mut z = b.to_vec();
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s -= l.get(i, k) * z[k];
        }
        z[i] = s / l.get(i, i);
    }
    // backward: Lᵀ x = z
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= l.get(k, i) * z[k];
        }
        z[i] = s / l.get(i, i);
    }
    Some(z)
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
pub fn cholesky(a: &Mat) -> Option<Mat> {
    let n = a.rows;
    assert_eq!(a.cols, n);
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > 0.0) {
            return None;
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Some(l)
}
