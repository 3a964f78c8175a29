use std::ops::{Index, IndexMut};

use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// A single-row matrix.
    pub fn row_vector(values: Vec<T>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values,
        }
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

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

    pub fn diag(&self) -> Vec<T> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self · rhs`
    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(
            self.cols,
            rhs.rows,
            "matmul shape mismatch: {:?} x {:?}",
            self.shape(),
            rhs.shape()
        );
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows, rhs.rows, "t_matmul shape mismatch");
        let mut out = Self::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let lhs_row = self.row(k);
            let rhs_row = rhs.row(k);
            for (i, &a) in lhs_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// `self · rhsᵀ`
    pub fn matmul_t(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.cols, "matmul_t shape mismatch");
        let mut out = Self::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                let b = rhs.row(j);
                let mut acc = T::zero();
                for (&x, &y) in a.iter().zip(b) {
                    acc = acc + x * y;
                }
                out.data[i * rhs.rows + j] = acc;
            }
        }
        out
    }

    /// Gram matrix `selfᵀ · self`, exactly symmetric.
    pub fn gram(&self) -> Self {
        let n = self.cols;
        let mut g = Self::zeros(n, n);
        for k in 0..self.rows {
            let row = self.row(k);
            for i in 0..n {
                let a = row[i];
                for (j, &b) in row.iter().enumerate().skip(i) {
                    g.data[i * n + j] = g.data[i * n + j] + a * b;
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                g.data[i * n + j] = g.data[j * n + i];
            }
        }
        g
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    /// Adds a `1 × cols` row vector to every row.
    pub fn add_row_broadcast(&mut self, bias: &Self) {
        assert_eq!(bias.rows, 1);
        assert_eq!(bias.cols, self.cols, "bias width mismatch");
        for r in 0..self.rows {
            for (v, &b) in self.row_mut(r).iter_mut().zip(&bias.data) {
                *v = *v + b;
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, rhs: &Self) -> T {
        assert_eq!(self.shape(), rhs.shape(), "diff shape mismatch");
        self.data
            .iter()
            .zip(&rhs.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `max |selfᵀ·self - I|`
    pub fn orthogonality_defect(&self) -> T {
        let g = self.t_matmul(self);
        let mut worst = T::zero();
        for i in 0..g.rows {
            for j in 0..g.cols {
                let target = if i == j { T::one() } else { T::zero() };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Square matrix with `QᵀQ = I` up to [`Scalar::ORTHO_TOL`].
#[derive(Clone, Debug, PartialEq)]
pub struct OrthogonalMatrix<T> {
    inner: DenseMatrix<T>,
}

impl<T: Scalar> OrthogonalMatrix<T> {
    pub fn new(m: DenseMatrix<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "orthogonal matrix must be square, got {:?}",
                m.shape()
            )));
        }
        if !m.is_finite() {
            return Err(Error::NonFinite);
        }
        let deviation = m.orthogonality_defect().to_f64_lossy();
        if deviation > T::ORTHO_TOL {
            return Err(Error::NotOrthogonal { deviation });
        }
        Ok(Self { inner: m })
    }

    pub(crate) fn new_unchecked(m: DenseMatrix<T>) -> Self {
        debug_assert!(m.is_square());
        Self { inner: m }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            inner: DenseMatrix::identity(dim),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.inner.rows()
    }

    pub fn as_matrix(&self) -> &DenseMatrix<T> {
        &self.inner
    }

    pub fn into_matrix(self) -> DenseMatrix<T> {
        self.inner
    }

    pub fn transpose(&self) -> Self {
        Self {
            inner: self.inner.transpose(),
        }
    }

    /// Negates every row whose entry in `signs` is `-1`.
    pub fn with_row_signs(&self, signs: &SignVector) -> Self {
        assert_eq!(signs.len(), self.dim());
        let mut m = self.inner.clone();
        for (r, s) in signs.iter().enumerate() {
            if s < 0 {
                for v in m.row_mut(r) {
                    *v = -*v;
                }
            }
        }
        Self { inner: m }
    }
}

impl<T> Index<(usize, usize)> for OrthogonalMatrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, idx: (usize, usize)) -> &T {
        &self.inner[idx]
    }
}

/// Per-row ±1 annotations of a rotation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SignVector {
    signs: Vec<i8>,
}

impl SignVector {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if let Some(bad) = signs.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::DimensionMismatch(format!(
                "sign entries must be ±1, found {bad}"
            )));
        }
        Ok(Self { signs })
    }

    pub fn all_positive(dim: usize) -> Self {
        Self {
            signs: vec![1; dim],
        }
    }

    pub(crate) fn from_bits(bits: impl IntoIterator<Item = bool>) -> Self {
        Self {
            signs: bits.into_iter().map(|b| if b { 1 } else { -1 }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.signs
    }

    pub fn iter(&self) -> impl Iterator<Item = i8> + '_ {
        self.signs.iter().copied()
    }
}

/// Row sums below this magnitude fall back to the largest-magnitude entry.
pub const ZERO_SUM_TOL: f64 = 1e-9;

/// Sign of a row sum with sign(0) = +1; near-zero sums take the sign of the
/// largest-magnitude entry (first one on ties).
pub fn row_sign<T: Scalar>(row: &[T]) -> i8 {
    let sum = row.iter().fold(T::zero(), |acc, &v| acc + v);
    if sum.abs().to_f64_lossy() < ZERO_SUM_TOL {
        let mut best = T::zero();
        for &v in row {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        return if best < T::zero() { -1 } else { 1 };
    }
    if sum < T::zero() {
        -1
    } else {
        1
    }
}

/// Row-sum signs of every row of `q`.
pub fn row_signs<T: Scalar>(q: &OrthogonalMatrix<T>) -> SignVector {
    let m = q.as_matrix();
    SignVector {
        signs: (0..m.rows()).map(|r| row_sign(m.row(r))).collect(),
    }
}

/// Flips rows so every row sum is positive; the returned signs record the
/// flip applied to each row.
pub fn apply_sign_convention<T: Scalar>(
    q: &OrthogonalMatrix<T>,
) -> (OrthogonalMatrix<T>, SignVector) {
    let s = row_signs(q);
    (q.with_row_signs(&s), s)
}

/// Normalizes every row to unit Euclidean norm.
pub fn rmsnorm<T: Scalar>(x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let floor = T::from_f64_lossy(1e-300).max(T::min_positive_value());
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
        if !(norm >= floor) {
            return Err(Error::ZeroRow { row: r });
        }
        for v in row.iter_mut() {
            *v = *v / norm;
        }
    }
    Ok(out)
}
