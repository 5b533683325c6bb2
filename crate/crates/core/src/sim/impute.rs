//! Baseline single-imputation methods: feature-mean imputation and
//! iterative truncated-SVD imputation, per source or on the stacked data.

use nalgebra::DMatrix;

use crate::data::{MissingMask, MultiOmicDataset};
use crate::error::{Error, Result};
use crate::linalg::{sorted_svd, vstack};

/// Fills each masked entry with the mean of its feature row's observed
/// entries; rows with no observed entries fall back to zero (the mean of a
/// centered feature).
pub fn mean_impute_matrix(m: &DMatrix<f64>, mask: &MissingMask) -> DMatrix<f64> {
    let mut out = m.clone();
    for j in 0..m.nrows() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..m.ncols() {
            if !mask.contains(j, i) {
                sum += m[(j, i)];
                count += 1;
            }
        }
        let fill = if count > 0 { sum / count as f64 } else { 0.0 };
        for i in 0..m.ncols() {
            if mask.contains(j, i) {
                out[(j, i)] = fill;
            }
        }
    }
    out
}

/// Mean imputation applied to every source of a dataset.
pub fn mean_impute(data: &MultiOmicDataset<f64>) -> Vec<DMatrix<f64>> {
    (0..data.q())
        .map(|s| mean_impute_matrix(data.source(s), data.mask(s)))
        .collect()
}

/// Iterative truncated-SVD imputation of one matrix: masked entries start
/// at their row means, then are repeatedly replaced by the rank-`k`
/// reconstruction of the filled matrix until the relative change of the
/// filled entries drops below `tol` or `max_iter` passes elapse.
pub fn svd_impute_matrix(
    m: &DMatrix<f64>,
    mask: &MissingMask,
    k: usize,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let (p, n) = (m.nrows(), m.ncols());
    if k == 0 || k > p.min(n) {
        return Err(Error::invalid(format!(
            "rank {k} out of range for a {p} x {n} matrix"
        )));
    }
    if mask.is_empty() {
        return Ok(m.clone());
    }
    let mut filled = mean_impute_matrix(m, mask);
    for _ in 0..max_iter {
        let svd = sorted_svd(&filled)?;
        let kept = k.min(svd.sigma.len());
        let mut recon = DMatrix::zeros(p, n);
        for c in 0..kept {
            if svd.sigma[c] <= 0.0 {
                break;
            }
            recon += svd.sigma[c] * svd.u.column(c) * svd.v.column(c).transpose();
        }
        let mut change = 0.0;
        let mut scale = 0.0;
        for &(j, i) in mask.indices() {
            let old = filled[(j, i)];
            let new = recon[(j, i)];
            change += (new - old) * (new - old);
            scale += old * old;
            filled[(j, i)] = new;
        }
        if change.sqrt() < tol * (1.0 + scale.sqrt()) {
            break;
        }
    }
    Ok(filled)
}

/// SVD imputation over a dataset: per source, or on the row-concatenated
/// stacked matrix when `combined` is set (sharing structure across
/// sources). Returns the completed per-source matrices.
pub fn svd_impute(
    data: &MultiOmicDataset<f64>,
    k: usize,
    tol: f64,
    max_iter: usize,
    combined: bool,
) -> Result<Vec<DMatrix<f64>>> {
    if !combined {
        return (0..data.q())
            .map(|s| svd_impute_matrix(data.source(s), data.mask(s), k, tol, max_iter))
            .collect();
    }
    let stacked = vstack(data.sources());
    let mut offsets = Vec::with_capacity(data.q());
    let mut row = 0;
    for s in 0..data.q() {
        offsets.push(row);
        row += data.source(s).nrows();
    }
    let mut indices = Vec::new();
    for s in 0..data.q() {
        for &(j, i) in data.mask(s).indices() {
            indices.push((offsets[s] + j, i));
        }
    }
    let mask = MissingMask::new(indices, stacked.nrows(), stacked.ncols())?;
    let completed = svd_impute_matrix(&stacked, &mask, k, tol, max_iter)?;
    Ok(crate::linalg::split_rows(&completed, &data.dims()))
}
