//! Cyclic Jacobi eigendecomposition for real symmetric matrices.
//!
//! The sweep order is fixed (row-major over the strict upper triangle) and
//! no step depends on anything but the input, so repeated calls on the same
//! build produce bit-identical results. Encoder and decoder both lean on that.

use super::matrix::{DenseMatrix, OrthogonalMatrix};
use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Relative off-diagonal Frobenius norm at which a sweep loop stops.
pub const EIG_TOL: f64 = 1e-13;
/// Sweep budget before giving up.
pub const MAX_SWEEPS: usize = 100;
/// Relative asymmetry accepted on input.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvalues in descending order with the matching eigenvectors as the
/// columns of `vectors`, so that `S = V · diag(values) · Vᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymEig<T> {
    pub values: Vec<T>,
    pub vectors: OrthogonalMatrix<T>,
}

impl<T: Scalar> SymEig<T> {
    /// `V · diag(λ) · Vᵀ`
    pub fn reconstruct(&self) -> DenseMatrix<T> {
        let v = self.vectors.as_matrix();
        let mut scaled = v.clone();
        for r in 0..scaled.rows() {
            for (x, &l) in scaled.row_mut(r).iter_mut().zip(&self.values) {
                *x = *x * l;
            }
        }
        scaled.matmul_t(v)
    }

    /// Smallest gap between consecutive eigenvalues (infinite for 1×1).
    pub fn min_gap(&self) -> T {
        self.values
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(T::infinity(), |m, g| m.min(g))
    }
}

/// Eigendecomposition of a symmetric matrix with the default tolerance.
pub fn sym_eig<T: Scalar>(s: &DenseMatrix<T>) -> Result<SymEig<T>> {
    sym_eig_with_tol(s, EIG_TOL)
}

pub fn sym_eig_with_tol<T: Scalar>(s: &DenseMatrix<T>, tol: f64) -> Result<SymEig<T>> {
    if !s.is_square() || s.rows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition needs a non-empty square matrix, got {:?}",
            s.shape()
        )));
    }
    if !s.is_finite() {
        return Err(Error::NonFinite);
    }
    let n = s.rows();
    let scale = s.max_abs();
    let mut asym = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    if asym.to_f64_lossy() > SYMMETRY_TOL * scale.to_f64_lossy() {
        return Err(Error::NonSymmetric {
            asymmetry: asym.to_f64_lossy(),
        });
    }

    // work on the upper triangle mirrored, so tiny input asymmetry is dropped
    let mut a = s.clone();
    for i in 0..n {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    let mut v = DenseMatrix::<T>::identity(n);

    let frob = s
        .as_slice()
        .iter()
        .fold(T::zero(), |acc, &x| acc + x * x)
        .sqrt();
    let tol = T::from_f64_lossy(tol.max(4.0 * T::epsilon().to_f64_lossy()));
    let threshold = tol * frob;

    let mut off = off_norm(&a);
    let mut sweeps = 0;
    while off > threshold {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                off_norm: off.to_f64_lossy(),
            });
        }
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                rotated |= rotate(&mut a, &mut v, p, q);
            }
        }
        sweeps += 1;
        off = off_norm(&a);
        if !rotated {
            break;
        }
    }

    let diag = a.diag();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep solver index order
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).expect("finite eigenvalues"));
    let values = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, new_col)] = v[(r, old_col)];
        }
    }
    Ok(SymEig {
        values,
        vectors: OrthogonalMatrix::new_unchecked(vectors),
    })
}

fn off_norm<T: Scalar>(a: &DenseMatrix<T>) -> T {
    let n = a.rows();
    let mut acc = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            let x = a[(i, j)];
            acc = acc + x * x;
        }
    }
    (acc + acc).sqrt()
}

/// One Jacobi rotation annihilating `a[p][q]`; returns false when it was
/// already zero.
fn rotate<T: Scalar>(a: &mut DenseMatrix<T>, v: &mut DenseMatrix<T>, p: usize, q: usize) -> bool {
    let apq = a[(p, q)];
    if apq == T::zero() {
        return false;
    }
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    let two = T::one() + T::one();
    let theta = (aqq - app) / (two * apq);
    let t = if theta.abs() > T::from_f64_lossy(1e150) {
        T::one() / (two * theta)
    } else {
        let sign = if theta < T::zero() {
            -T::one()
        } else {
            T::one()
        };
        sign / (theta.abs() + (theta * theta + T::one()).sqrt())
    };
    let c = T::one() / (t * t + T::one()).sqrt();
    let s = t * c;

    let n = a.rows();
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a[(k, p)] = new_kp;
        a[(p, k)] = new_kp;
        a[(k, q)] = new_kq;
        a[(q, k)] = new_kq;
    }
    a[(p, p)] = app - t * apq;
    a[(q, q)] = aqq + t * apq;
    a[(p, q)] = T::zero();
    a[(q, p)] = T::zero();

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
    true
}
