//! Small dense linear-algebra helpers shared by the solver and the sampler.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-concatenate per-source matrices into the stacked `p x n` matrix.
pub fn vstack<T: Real>(blocks: &[DMatrix<T>]) -> DMatrix<T> {
    let n = blocks.first().map_or(0, |b| b.ncols());
    let p: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(p, n);
    let mut row = 0;
    for b in blocks {
        out.view_mut((row, 0), (b.nrows(), b.ncols())).copy_from(b);
        row += b.nrows();
    }
    out
}

/// Split a stacked `p x n` matrix back into per-source blocks of the given
/// row counts.
pub fn split_rows<T: Real>(stacked: &DMatrix<T>, row_counts: &[usize]) -> Vec<DMatrix<T>> {
    let mut out = Vec::with_capacity(row_counts.len());
    let mut row = 0;
    for &p in row_counts {
        out.push(stacked.view((row, 0), (p, stacked.ncols())).into_owned());
        row += p;
    }
    out
}

/// Squared Frobenius norm.
pub fn frob_sq<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, &x| acc + x * x)
}

/// Result of a thin SVD with singular values sorted in decreasing order.
pub struct SortedSvd<T: Real> {
    /// Left singular vectors, one column per singular value.
    pub u: DMatrix<T>,
    /// Singular values, decreasing.
    pub sigma: Vec<T>,
    /// Right singular vectors, one column per singular value.
    pub v: DMatrix<T>,
}

/// Thin SVD with columns ordered by decreasing singular value.
///
/// Computed from a symmetric eigendecomposition of the Gram matrix on the
/// smaller side (singular values are the square roots of its eigenvalues;
/// the other side's vectors are recovered by projection). Columns whose
/// singular value is negligible relative to the largest are left as zero
/// vectors: every consumer in this crate discards them by thresholding.
pub fn sorted_svd<T: Real>(m: &DMatrix<T>) -> Result<SortedSvd<T>> {
    let (p, n) = (m.nrows(), m.ncols());
    if p == 0 || n == 0 {
        return Ok(SortedSvd {
            u: DMatrix::zeros(p, 0),
            sigma: Vec::new(),
            v: DMatrix::zeros(n, 0),
        });
    }

    let use_rows = p <= n;
    let gram = if use_rows {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    if gram.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("svd input contains non-finite values"));
    }
    let gram_dim = gram.nrows();
    let eig = gram.symmetric_eigen();
    let k = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues are finite")
    });

    let mut sigma = Vec::with_capacity(k);
    let mut small = DMatrix::zeros(gram_dim, k);
    for (dst, &src) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[src];
        sigma.push(if lambda > T::zero() {
            lambda.sqrt()
        } else {
            T::zero()
        });
        small.set_column(dst, &eig.eigenvectors.column(src));
    }

    // Recover the other side: columns with negligible singular value stay 0.
    let top = sigma[0];
    let negligible = top * T::approx(1e-14);
    let projected = if use_rows {
        m.transpose() * &small
    } else {
        m * &small
    };
    let mut other = DMatrix::zeros(projected.nrows(), k);
    for c in 0..k {
        if sigma[c] > negligible {
            // Normalize explicitly: dividing by sigma alone leaves a
            // relative norm error of order eps * (sigma_max / sigma_c)^2.
            let col = projected.column(c);
            let norm = col.norm();
            if norm > T::zero() {
                other.set_column(c, &(col / norm));
                sigma[c] = norm;
            }
        }
    }

    let (u, v) = if use_rows { (small, other) } else { (other, small) };
    Ok(SortedSvd { u, sigma, v })
}

/// Nuclear norm (sum of singular values).
pub fn nuclear_norm<T: Real>(m: &DMatrix<T>) -> Result<T> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(T::zero());
    }
    Ok(sorted_svd(m)?
        .sigma
        .iter()
        .fold(T::zero(), |acc, &s| acc + s))
}

/// A balanced factor pair `(left, right)` with `left * right^T = m` and
/// `||left||_F^2 = ||right||_F^2`, keeping components whose singular value
/// exceeds `rel_cutoff` times the largest.
pub fn balanced_factors<T: Real>(
    m: &DMatrix<T>,
    rel_cutoff: T,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let (p, n) = (m.nrows(), m.ncols());
    if p == 0 || n == 0 {
        return Ok((DMatrix::zeros(p, 0), DMatrix::zeros(n, 0)));
    }
    let svd = sorted_svd(m)?;
    let top = svd.sigma.first().copied().unwrap_or_else(T::zero);
    let cut = rel_cutoff * top;
    let r = svd
        .sigma
        .iter()
        .take_while(|&&s| s > cut && s > T::zero())
        .count();
    let mut left = DMatrix::zeros(p, r);
    let mut right = DMatrix::zeros(n, r);
    for k in 0..r {
        let root = svd.sigma[k].sqrt();
        left.set_column(k, &(svd.u.column(k) * root));
        right.set_column(k, &(svd.v.column(k) * root));
    }
    Ok((left, right))
}

/// `left * right^T`, treating zero-column factors as a zero matrix of shape
/// `left.nrows() x right.nrows()`.
pub fn factor_product<T: Real>(left: &DMatrix<T>, right: &DMatrix<T>) -> DMatrix<T> {
    if left.ncols() == 0 {
        DMatrix::zeros(left.nrows(), right.nrows())
    } else {
        left * right.transpose()
    }
}

/// Mean of a slice; zero for an empty slice.
pub fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    let sum = xs.iter().fold(T::zero(), |acc, &x| acc + x);
    sum / T::from_usize(xs.len()).expect("length fits in scalar")
}

/// Median of an unsorted slice (midpoint of the two middles for even
/// lengths). Panics on empty input.
pub fn median<T: Real>(xs: &[T]) -> T {
    assert!(!xs.is_empty(), "median of empty slice");
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("comparable values"));
    let m = sorted.len();
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        (sorted[m / 2 - 1] + sorted[m / 2]) / T::approx(2.0)
    }
}

/// Dot product of a matrix row with a vector, without allocating.
pub fn row_dot<T: Real>(m: &DMatrix<T>, row: usize, v: &DVector<T>) -> T {
    debug_assert_eq!(m.ncols(), v.len());
    let mut acc = T::zero();
    for c in 0..m.ncols() {
        acc += m[(row, c)] * v[c];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stack_and_split_round_trip() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = DMatrix::from_row_slice(1, 3, &[7.0, 8.0, 9.0]);
        let stacked = vstack(&[a.clone(), b.clone()]);
        assert_eq!(stacked.nrows(), 3);
        let parts = split_rows(&stacked, &[2, 1]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn svd_sorted_descending() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let svd = sorted_svd(&m).unwrap();
        assert_relative_eq!(svd.sigma[0], 3.0, max_relative = 1e-12);
        assert_relative_eq!(svd.sigma[1], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn balanced_split_balances_and_reconstructs() {
        let m = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let (l, r) = balanced_factors(&m, 1e-8).unwrap();
        let back = factor_product(&l, &r);
        assert_relative_eq!((&back - &m).norm(), 0.0, epsilon = 1e-10);
        assert_relative_eq!(frob_sq(&l), frob_sq(&r), max_relative = 1e-10);
    }

    #[test]
    fn zero_rank_factors_give_zero_product() {
        let m: DMatrix<f64> = DMatrix::zeros(3, 2);
        let (l, r) = balanced_factors(&m, 1e-8).unwrap();
        assert_eq!(l.ncols(), 0);
        let prod = factor_product(&l, &r);
        assert_eq!(prod, DMatrix::zeros(3, 2));
    }

    #[test]
    fn median_rules() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn generic_over_f32() {
        let m = DMatrix::<f32>::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let svd = sorted_svd(&m).unwrap();
        assert!((svd.sigma[0] - 3.0).abs() < 1e-5);
    }
}
