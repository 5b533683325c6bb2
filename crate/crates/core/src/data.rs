//! Core data structures: column-linked multi-source matrices with missing
//! entries, row centering, and unit-error-variance scaling.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::noise::estimate_noise_sd;
use crate::scalar::Real;

/// Set of missing (row, col) positions of one source, kept sorted so that
/// every pass over it is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MissingMask {
    indices: Vec<(usize, usize)>,
    membership: HashSet<(usize, usize)>,
}

impl MissingMask {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a mask, deduplicating and sorting the given positions and
    /// checking them against the source shape.
    pub fn new(mut indices: Vec<(usize, usize)>, rows: usize, cols: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&(j, i)) = indices.iter().find(|&&(j, i)| j >= rows || i >= cols) {
            return Err(Error::invalid(format!(
                "missing index ({j}, {i}) out of bounds for {rows} x {cols} source"
            )));
        }
        let membership = indices.iter().copied().collect();
        Ok(Self {
            indices,
            membership,
        })
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.membership.contains(&(row, col))
    }

    /// Masked positions in sorted order.
    pub fn indices(&self) -> &[(usize, usize)] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Centering and scaling state of a dataset, sufficient to restore the
/// original observed values exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingMeta<T: Real> {
    /// Per-source feature means removed by centering (over observed entries).
    pub row_means: Vec<DVector<T>>,
    /// Per-source error standard deviations divided out by scaling.
    pub noise_sd: Vec<T>,
    /// Whether centering has been applied.
    pub centered: bool,
    /// Whether unit-error-variance scaling has been applied.
    pub scaled: bool,
}

impl<T: Real> ScalingMeta<T> {
    fn identity(dims: &[usize]) -> Self {
        Self {
            row_means: dims.iter().map(|&p| DVector::zeros(p)).collect(),
            noise_sd: vec![T::one(); dims.len()],
            centered: false,
            scaled: false,
        }
    }
}

/// Kind of outcome attached to a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

/// Outcome vector over the shared samples, with a missing-index set.
/// Values at missing positions are placeholders and never read.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeSpec<T: Real> {
    pub kind: OutcomeKind,
    values: DVector<T>,
    missing: Vec<usize>,
}

impl<T: Real> OutcomeSpec<T> {
    pub fn new(kind: OutcomeKind, values: DVector<T>, mut missing: Vec<usize>) -> Result<Self> {
        missing.sort_unstable();
        missing.dedup();
        if let Some(&i) = missing.iter().find(|&&i| i >= values.len()) {
            return Err(Error::invalid(format!(
                "missing outcome index {i} out of bounds for {} samples",
                values.len()
            )));
        }
        let missing_set: HashSet<usize> = missing.iter().copied().collect();
        for i in 0..values.len() {
            if missing_set.contains(&i) {
                continue;
            }
            let v = values[i];
            if !v.is_finite() {
                return Err(Error::invalid(format!(
                    "outcome value at sample {i} is not finite"
                )));
            }
            if kind == OutcomeKind::Binary && v != T::zero() && v != T::one() {
                return Err(Error::invalid(format!(
                    "binary outcome at sample {i} must be exactly 0 or 1, got {}",
                    v.to_f64_lossy()
                )));
            }
        }
        Ok(Self {
            kind,
            values,
            missing,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }

    pub fn values(&self) -> &DVector<T> {
        &self.values
    }

    /// Sorted missing sample indices.
    pub fn missing(&self) -> &[usize] {
        &self.missing
    }

    pub fn is_missing(&self, i: usize) -> bool {
        self.missing.binary_search(&i).is_ok()
    }

    pub fn n_missing(&self) -> usize {
        self.missing.len()
    }

    /// Replaces the missing-index set (used when masking outcomes for
    /// semi-supervised fits).
    pub fn with_missing(&self, missing: Vec<usize>) -> Result<Self> {
        Self::new(self.kind, self.values.clone(), missing)
    }
}

/// `q` feature-by-sample matrices linked by their columns, with per-source
/// missing-entry masks and centering/scaling metadata.
///
/// Immutable after construction: transforms return new values, so a dataset
/// can be shared read-only across parallel workers.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiOmicDataset<T: Real> {
    sources: Vec<DMatrix<T>>,
    sample_ids: Vec<String>,
    feature_ids: Vec<Vec<String>>,
    missing: Vec<MissingMask>,
    scaling: ScalingMeta<T>,
}

impl<T: Real> MultiOmicDataset<T> {
    pub fn new(
        sources: Vec<DMatrix<T>>,
        sample_ids: Vec<String>,
        feature_ids: Vec<Vec<String>>,
        missing: Vec<MissingMask>,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::invalid("need at least one source"));
        }
        if sources.len() != missing.len() || sources.len() != feature_ids.len() {
            return Err(Error::dims(
                "sources, feature ids, and masks must have matching lengths".to_string(),
            ));
        }
        let n = sample_ids.len();
        if n < 2 {
            return Err(Error::invalid("need at least two samples"));
        }
        let mut seen = HashSet::new();
        for id in &sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateSampleId(id.clone()));
            }
        }
        for (s, src) in sources.iter().enumerate() {
            if src.ncols() != n {
                return Err(Error::dims(format!(
                    "source {s} has {} columns, expected {n}",
                    src.ncols()
                )));
            }
            if src.nrows() == 0 {
                return Err(Error::invalid(format!("source {s} has no features")));
            }
            if feature_ids[s].len() != src.nrows() {
                return Err(Error::dims(format!(
                    "source {s}: {} feature ids for {} rows",
                    feature_ids[s].len(),
                    src.nrows()
                )));
            }
            for j in 0..src.nrows() {
                let mut observed = 0;
                for i in 0..n {
                    if missing[s].contains(j, i) {
                        continue;
                    }
                    observed += 1;
                    if !src[(j, i)].is_finite() {
                        return Err(Error::invalid(format!(
                            "source {s} entry ({j}, {i}) is not finite"
                        )));
                    }
                }
                if observed == 0 {
                    return Err(Error::FullyMissingRow { source_index: s, row: j });
                }
            }
        }
        let dims: Vec<usize> = sources.iter().map(|m| m.nrows()).collect();
        Ok(Self {
            sources,
            sample_ids,
            feature_ids,
            missing,
            scaling: ScalingMeta::identity(&dims),
        })
    }

    /// Convenience constructor for generated data: synthesizes sample and
    /// feature ids.
    pub fn from_matrices(sources: Vec<DMatrix<T>>, missing: Vec<MissingMask>) -> Result<Self> {
        let n = sources.first().map_or(0, |m| m.ncols());
        let sample_ids = (0..n).map(|i| format!("sample_{i}")).collect();
        let feature_ids = sources
            .iter()
            .enumerate()
            .map(|(s, m)| (0..m.nrows()).map(|j| format!("s{s}_f{j}")).collect())
            .collect();
        Self::new(sources, sample_ids, feature_ids, missing)
    }

    pub fn q(&self) -> usize {
        self.sources.len()
    }

    pub fn n(&self) -> usize {
        self.sample_ids.len()
    }

    /// Per-source feature counts p_s.
    pub fn dims(&self) -> Vec<usize> {
        self.sources.iter().map(|m| m.nrows()).collect()
    }

    /// Total feature count p across sources.
    pub fn total_features(&self) -> usize {
        self.sources.iter().map(|m| m.nrows()).sum()
    }

    pub fn source(&self, s: usize) -> &DMatrix<T> {
        &self.sources[s]
    }

    pub fn sources(&self) -> &[DMatrix<T>] {
        &self.sources
    }

    pub fn mask(&self, s: usize) -> &MissingMask {
        &self.missing[s]
    }

    pub fn masks(&self) -> &[MissingMask] {
        &self.missing
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn feature_ids(&self, s: usize) -> &[String] {
        &self.feature_ids[s]
    }

    pub fn scaling(&self) -> &ScalingMeta<T> {
        &self.scaling
    }

    pub fn any_missing(&self) -> bool {
        self.missing.iter().any(|m| !m.is_empty())
    }

    /// Copy of source `s` with missing entries replaced by zero (the mean of
    /// a centered feature). Used for noise estimation and mode
    /// initialization only; masked entries are never treated as observed.
    pub fn zero_filled(&self, s: usize) -> DMatrix<T> {
        let mut m = self.sources[s].clone();
        for &(j, i) in self.missing[s].indices() {
            m[(j, i)] = T::zero();
        }
        m
    }

    /// Returns a copy with the given masks installed and the masked entries
    /// zeroed out so stale values cannot leak into later stages.
    pub fn with_masks(&self, masks: Vec<MissingMask>) -> Result<Self> {
        if masks.len() != self.q() {
            return Err(Error::dims("one mask per source required".to_string()));
        }
        let mut sources = self.sources.clone();
        for (s, mask) in masks.iter().enumerate() {
            for &(j, i) in mask.indices() {
                if j >= sources[s].nrows() || i >= sources[s].ncols() {
                    return Err(Error::invalid(format!(
                        "mask index ({j}, {i}) out of bounds in source {s}"
                    )));
                }
                sources[s][(j, i)] = T::zero();
            }
        }
        let mut out = self.clone();
        out.sources = sources;
        out.missing = masks;
        out.validate_rows()?;
        Ok(out)
    }

    fn validate_rows(&self) -> Result<()> {
        for (s, src) in self.sources.iter().enumerate() {
            for j in 0..src.nrows() {
                if (0..src.ncols()).all(|i| self.missing[s].contains(j, i)) {
                    return Err(Error::FullyMissingRow { source_index: s, row: j });
                }
            }
        }
        Ok(())
    }

    /// Removes the observed mean of every feature row. Masks are unchanged;
    /// the removed means accumulate in the scaling metadata.
    pub fn center_rows(&self) -> Result<Self> {
        let mut out = self.clone();
        for s in 0..self.q() {
            let src = &mut out.sources[s];
            for j in 0..src.nrows() {
                let mut sum = T::zero();
                let mut count = 0usize;
                for i in 0..src.ncols() {
                    if !self.missing[s].contains(j, i) {
                        sum += src[(j, i)];
                        count += 1;
                    }
                }
                if count == 0 {
                    return Err(Error::FullyMissingRow { source_index: s, row: j });
                }
                let mean = sum / T::from_usize(count).expect("count fits");
                for i in 0..src.ncols() {
                    src[(j, i)] -= mean;
                }
                // Means accumulate on the original scale.
                out.scaling.row_means[s][j] += mean * out.scaling.noise_sd[s];
            }
        }
        out.scaling.centered = true;
        Ok(out)
    }

    /// Divides every source by its estimated error standard deviation so the
    /// noise has unit variance. Requires a centered dataset.
    pub fn scale_to_unit_error(&self) -> Result<Self> {
        if !self.scaling.centered {
            return Err(Error::invalid("scale_to_unit_error requires centered data"));
        }
        let mut out = self.clone();
        for s in 0..self.q() {
            let sd = estimate_noise_sd(&self.zero_filled(s))?;
            out.sources[s] /= sd;
            out.scaling.noise_sd[s] *= sd;
        }
        out.scaling.scaled = true;
        Ok(out)
    }

    /// Maps a value on the working (centered/scaled) scale of source `s`,
    /// feature `j`, back to the original scale.
    pub fn to_original_scale(&self, s: usize, j: usize, value: T) -> T {
        value * self.scaling.noise_sd[s] + self.scaling.row_means[s][j]
    }

    /// Installs externally persisted scaling metadata (shape-checked).
    pub fn with_scaling(&self, scaling: ScalingMeta<T>) -> Result<Self> {
        if scaling.noise_sd.len() != self.q()
            || scaling.row_means.len() != self.q()
            || scaling
                .row_means
                .iter()
                .zip(self.sources.iter())
                .any(|(m, src)| m.len() != src.nrows())
        {
            return Err(Error::dims("scaling metadata does not match dataset".to_string()));
        }
        let mut out = self.clone();
        out.scaling = scaling;
        Ok(out)
    }

    /// Undoes scaling and centering, restoring the original observed values.
    pub fn restore_original(&self) -> Self {
        let mut out = self.clone();
        for s in 0..self.q() {
            for j in 0..out.sources[s].nrows() {
                for i in 0..out.sources[s].ncols() {
                    out.sources[s][(j, i)] = self.to_original_scale(s, j, self.sources[s][(j, i)]);
                }
            }
        }
        let dims = self.dims();
        out.scaling = ScalingMeta::identity(&dims);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn simple_dataset() -> MultiOmicDataset<f64> {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 5.0, 0.0, 7.0]);
        let mask = MissingMask::new(vec![(1, 1)], 2, 3).unwrap();
        MultiOmicDataset::from_matrices(vec![a], vec![mask]).unwrap()
    }

    #[test]
    fn centering_uses_observed_means_only() {
        let d = simple_dataset().center_rows().unwrap();
        let src = d.source(0);
        // Row 0: [1,2,3] -> [-1,0,1]; row 1 observed [5,7] -> mean 6.
        assert_eq!(src[(0, 0)], -1.0);
        assert_eq!(src[(0, 1)], 0.0);
        assert_eq!(src[(0, 2)], 1.0);
        assert_eq!(src[(1, 0)], -1.0);
        assert_eq!(src[(1, 2)], 1.0);
        assert_eq!(d.scaling().row_means[0][0], 2.0);
        assert_eq!(d.scaling().row_means[0][1], 6.0);
        // Mask untouched.
        assert!(d.mask(0).contains(1, 1));
    }

    #[test]
    fn centering_already_centered_row_is_identity() {
        let a = DMatrix::from_row_slice(1, 3, &[-1.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(1, 3, &[9.0, 9.0, 9.0]);
        let d = MultiOmicDataset::from_matrices(vec![a, b], vec![
            MissingMask::empty(),
            MissingMask::empty(),
        ])
        .unwrap();
        let c = d.center_rows().unwrap();
        assert_eq!(c.source(0)[(0, 0)], -1.0);
        assert_eq!(c.scaling().row_means[0][0], 0.0);
        // Constant rows center to exactly zero and are retained.
        assert_eq!(c.source(1)[(0, 0)], 0.0);
        assert_eq!(c.scaling().row_means[1][0], 9.0);
    }

    #[test]
    fn observed_row_means_are_zero_after_centering() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DMatrix::from_fn(20, 15, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            3.0 * z + 7.0
        });
        let mask = MissingMask::new(vec![(0, 3), (5, 1), (5, 2)], 20, 15).unwrap();
        let d = MultiOmicDataset::from_matrices(vec![m], vec![mask])
            .unwrap()
            .center_rows()
            .unwrap();
        for j in 0..20 {
            let mut sum = 0.0;
            let mut k = 0;
            for i in 0..15 {
                if !d.mask(0).contains(j, i) {
                    sum += d.source(0)[(j, i)];
                    k += 1;
                }
            }
            assert!((sum / k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_then_restore_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = DMatrix::from_fn(40, 30, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            2.0 * z + 5.0
        });
        let d = MultiOmicDataset::from_matrices(vec![m.clone()], vec![MissingMask::empty()])
            .unwrap();
        let worked = d.center_rows().unwrap().scale_to_unit_error().unwrap();
        assert!(worked.scaling().scaled);
        let restored = worked.restore_original();
        for j in 0..40 {
            for i in 0..30 {
                assert_relative_eq!(
                    restored.source(0)[(j, i)],
                    m[(j, i)],
                    max_relative = 1e-10
                );
            }
        }
    }

    #[test]
    fn scaling_makes_noise_sd_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let m = DMatrix::from_fn(120, 90, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            2.0 * z
        });
        let d = MultiOmicDataset::from_matrices(vec![m], vec![MissingMask::empty()]).unwrap();
        let scaled = d.center_rows().unwrap().scale_to_unit_error().unwrap();
        let sd_after = crate::noise::estimate_noise_sd(&scaled.zero_filled(0)).unwrap();
        assert!(sd_after > 0.9 && sd_after < 1.1, "sd after scaling {sd_after}");
        // Applying twice: the second factor is near one.
        let twice = scaled.scale_to_unit_error().unwrap();
        let second_factor = twice.scaling().noise_sd[0] / scaled.scaling().noise_sd[0];
        assert!(second_factor > 0.9 && second_factor < 1.1);
    }

    #[test]
    fn scale_requires_centering_first() {
        let d = simple_dataset();
        assert!(d.scale_to_unit_error().is_err());
    }

    #[test]
    fn constructor_rejects_bad_shapes() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0; 6]);
        let b = DMatrix::from_row_slice(2, 4, &[1.0; 8]);
        assert!(MultiOmicDataset::from_matrices(
            vec![a.clone(), b],
            vec![MissingMask::empty(), MissingMask::empty()]
        )
        .is_err());

        let dup = MultiOmicDataset::new(
            vec![a],
            vec!["s1".into(), "s1".into(), "s2".into()],
            vec![vec!["f1".into(), "f2".into()]],
            vec![MissingMask::empty()],
        );
        assert!(matches!(dup, Err(Error::DuplicateSampleId(_))));
    }

    #[test]
    fn fully_missing_row_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mask = MissingMask::new(vec![(0, 0), (0, 1)], 2, 2).unwrap();
        let r = MultiOmicDataset::from_matrices(vec![a], vec![mask]);
        assert!(matches!(r, Err(Error::FullyMissingRow { .. })));
    }

    #[test]
    fn binary_outcome_validation() {
        let y = nalgebra::DVector::from_column_slice(&[0.0, 1.0, 0.5]);
        assert!(OutcomeSpec::new(OutcomeKind::Binary, y.clone(), vec![]).is_err());
        // 0.5 at a missing position is fine: placeholders are never read.
        assert!(OutcomeSpec::new(OutcomeKind::Binary, y, vec![2]).is_ok());
    }
}
