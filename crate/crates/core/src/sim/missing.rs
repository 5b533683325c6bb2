//! Missingness injection: entrywise, blockwise (whole columns per source,
//! disjoint across sources), and missing-not-at-random (lowest values).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{MissingMask, MultiOmicDataset};
use crate::error::{Error, Result};

use super::MissingSpec;

/// The true values removed by masking, per source, in the same sorted order
/// as the resulting masks' index lists.
#[derive(Debug, Clone, PartialEq)]
pub struct RemovedTruth {
    pub per_source: Vec<Vec<f64>>,
}

/// Masks entries of a fully observed dataset according to the mechanism,
/// returning the masked dataset and the removed true values.
pub fn inject_missingness(
    data: &MultiOmicDataset<f64>,
    spec: &MissingSpec,
    seed: u64,
) -> Result<(MultiOmicDataset<f64>, RemovedTruth)> {
    if data.any_missing() {
        return Err(Error::invalid("dataset already has missing entries"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.n();
    let q = data.q();

    let mut masks: Vec<MissingMask> = Vec::with_capacity(q);
    match spec {
        MissingSpec::None => {
            masks = vec![MissingMask::empty(); q];
        }
        MissingSpec::Entrywise { fraction } => {
            for s in 0..q {
                let p_s = data.source(s).nrows();
                let count = (fraction * (p_s * n) as f64).round() as usize;
                let mut all: Vec<(usize, usize)> = (0..p_s)
                    .flat_map(|j| (0..n).map(move |i| (j, i)))
                    .collect();
                all.shuffle(&mut rng);
                masks.push(MissingMask::new(all[..count].to_vec(), p_s, n)?);
            }
        }
        MissingSpec::Blockwise { cols_per_source } => {
            let need = cols_per_source * q;
            if need > n {
                return Err(Error::invalid(format!(
                    "blockwise needs {need} disjoint columns but only {n} samples exist"
                )));
            }
            let mut cols: Vec<usize> = (0..n).collect();
            cols.shuffle(&mut rng);
            for s in 0..q {
                let p_s = data.source(s).nrows();
                let chosen = &cols[s * cols_per_source..(s + 1) * cols_per_source];
                let mut idx = Vec::with_capacity(p_s * cols_per_source);
                for &i in chosen {
                    for j in 0..p_s {
                        idx.push((j, i));
                    }
                }
                masks.push(MissingMask::new(idx, p_s, n)?);
            }
        }
        MissingSpec::Mnar { fraction } => {
            for s in 0..q {
                let p_s = data.source(s).nrows();
                let count = (fraction * (p_s * n) as f64).round() as usize;
                let mut entries: Vec<((usize, usize), f64)> = (0..p_s)
                    .flat_map(|j| (0..n).map(move |i| ((j, i), data.source(s)[(j, i)])))
                    .collect();
                entries.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite values"));
                let idx: Vec<(usize, usize)> =
                    entries[..count].iter().map(|&(ji, _)| ji).collect();
                masks.push(MissingMask::new(idx, p_s, n)?);
            }
        }
    }

    let mut removed = Vec::with_capacity(q);
    for s in 0..q {
        removed.push(
            masks[s]
                .indices()
                .iter()
                .map(|&(j, i)| data.source(s)[(j, i)])
                .collect(),
        );
    }
    let masked = data.with_masks(masks)?;
    Ok((masked, RemovedTruth {
        per_source: removed,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand_distr::{Distribution, StandardNormal};

    fn full_dataset(seed: u64, dims: &[usize], n: usize) -> MultiOmicDataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sources = dims
            .iter()
            .map(|&p| DMatrix::from_fn(p, n, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        MultiOmicDataset::from_matrices(sources, vec![MissingMask::empty(); dims.len()]).unwrap()
    }

    #[test]
    fn entrywise_masks_exact_count() {
        let d = full_dataset(1, &[100, 100], 100);
        let (masked, removed) =
            inject_missingness(&d, &MissingSpec::Entrywise { fraction: 0.1 }, 9).unwrap();
        for s in 0..2 {
            assert_eq!(masked.mask(s).len(), 1000);
            assert_eq!(removed.per_source[s].len(), 1000);
        }
    }

    #[test]
    fn blockwise_columns_are_disjoint_across_sources() {
        let d = full_dataset(2, &[20, 30], 100);
        let (masked, _) = inject_missingness(
            &d,
            &MissingSpec::Blockwise {
                cols_per_source: 10,
            },
            5,
        )
        .unwrap();
        let cols_of = |s: usize| -> std::collections::BTreeSet<usize> {
            masked.mask(s).indices().iter().map(|&(_, i)| i).collect()
        };
        let c0 = cols_of(0);
        let c1 = cols_of(1);
        assert_eq!(c0.len(), 10);
        assert_eq!(c1.len(), 10);
        assert!(c0.is_disjoint(&c1));
        // Whole columns: every row of a chosen column is masked.
        assert_eq!(masked.mask(0).len(), 20 * 10);

        // Too many columns for disjointness is rejected.
        assert!(inject_missingness(
            &d,
            &MissingSpec::Blockwise {
                cols_per_source: 60,
            },
            5,
        )
        .is_err());
    }

    #[test]
    fn mnar_masks_lowest_values() {
        let d = full_dataset(3, &[30, 30], 40);
        let (masked, removed) =
            inject_missingness(&d, &MissingSpec::Mnar { fraction: 0.1 }, 5).unwrap();
        for s in 0..2 {
            let max_removed = removed.per_source[s]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let mut min_kept = f64::INFINITY;
            for j in 0..30 {
                for i in 0..40 {
                    if !masked.mask(s).contains(j, i) {
                        min_kept = min_kept.min(d.source(s)[(j, i)]);
                    }
                }
            }
            assert!(max_removed <= min_kept);
        }
    }

    #[test]
    fn removed_truth_round_trips() {
        let d = full_dataset(4, &[10, 15], 12);
        let (masked, removed) =
            inject_missingness(&d, &MissingSpec::Entrywise { fraction: 0.2 }, 7).unwrap();
        for s in 0..2 {
            for (k, &(j, i)) in masked.mask(s).indices().iter().enumerate() {
                assert_eq!(removed.per_source[s][k], d.source(s)[(j, i)]);
                // The masked copy zeroes the entry so it cannot leak.
                assert_eq!(masked.source(s)[(j, i)], 0.0);
            }
        }
    }
}
