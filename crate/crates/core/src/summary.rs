//! Posterior summaries: relative squared error, credible intervals,
//! coverage, variance explained, outcome prediction, and cluster-stability
//! maps over posterior draws.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::align::AlignedSamples;
use crate::data::{MultiOmicDataset, OutcomeKind};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stats::{credible_interval, norm_cdf};

/// Relative squared error: squared Frobenius error normalized by the
/// truth's squared norm.
pub fn rse<T: Real>(truth: &DMatrix<T>, estimate: &DMatrix<T>) -> Result<T> {
    if truth.shape() != estimate.shape() {
        return Err(Error::dims(format!(
            "truth is {:?}, estimate {:?}",
            truth.shape(),
            estimate.shape()
        )));
    }
    rse_slices(truth.as_slice(), estimate.as_slice())
}

/// Relative squared error over paired scalar slices.
pub fn rse_slices<T: Real>(truth: &[T], estimate: &[T]) -> Result<T> {
    if truth.len() != estimate.len() {
        return Err(Error::dims("length mismatch in relative error".to_string()));
    }
    let mut num = T::zero();
    let mut den = T::zero();
    for (&t, &e) in truth.iter().zip(estimate) {
        num += (t - e) * (t - e);
        den += t * t;
    }
    if den == T::zero() {
        return Err(Error::ZeroNormTruth);
    }
    Ok(num / den)
}

/// Posterior summary of one scalar: mean, standard deviation, and an
/// equal-tailed interval at the requested level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow<T: Real> {
    pub mean: T,
    pub sd: T,
    pub lower: T,
    pub upper: T,
}

impl<T: Real> SummaryRow<T> {
    pub fn covers(&self, truth: T) -> bool {
        truth >= self.lower && truth <= self.upper
    }

    pub fn width(&self) -> T {
        self.upper - self.lower
    }
}

/// Summarizes draws of one scalar with an equal-tailed interval.
pub fn summarize_draws<T: Real>(draws: &[T], level: T) -> SummaryRow<T> {
    assert!(!draws.is_empty(), "no draws to summarize");
    let m = T::from_usize(draws.len()).expect("length fits");
    let mean = draws.iter().fold(T::zero(), |a, &x| a + x) / m;
    let var = if draws.len() > 1 {
        draws
            .iter()
            .fold(T::zero(), |a, &x| a + (x - mean) * (x - mean))
            / (m - T::one())
    } else {
        T::zero()
    };
    let (lower, upper) = credible_interval(draws, level);
    SummaryRow {
        mean,
        sd: var.sqrt(),
        lower,
        upper,
    }
}

/// Fraction of truths falling inside their paired intervals.
pub fn coverage<T: Real>(intervals: &[(T, T)], truths: &[T]) -> T {
    assert_eq!(intervals.len(), truths.len());
    if truths.is_empty() {
        return T::zero();
    }
    let hits = intervals
        .iter()
        .zip(truths)
        .filter(|((lo, hi), t)| **t >= *lo && **t <= *hi)
        .count();
    T::from_usize(hits).expect("count fits") / T::from_usize(truths.len()).expect("length fits")
}

/// Which variance-explained decomposition to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceTarget {
    /// Per source: ||J_s||_F^2 / ||X_s||_F^2 per iteration.
    Joint,
    /// Per source: ||A_s||_F^2 / ||X_s||_F^2 per iteration.
    Individual,
    /// Per coefficient block (joint first, then each source): the variance
    /// of that block's contribution to the linear predictor over the
    /// variance of the fitted values plus the noise variance.
    OutcomeBlocks,
}

fn observed_frob_sq<T: Real>(data: &MultiOmicDataset<T>, s: usize) -> T {
    let x = data.source(s);
    let mut total = T::zero();
    for i in 0..x.ncols() {
        for j in 0..x.nrows() {
            if !data.mask(s).contains(j, i) {
                total += x[(j, i)] * x[(j, i)];
            }
        }
    }
    total
}

fn sample_variance<T: Real>(v: &DVector<T>) -> T {
    let n = T::from_usize(v.len()).expect("length fits");
    let mean = v.iter().fold(T::zero(), |a, &x| a + x) / n;
    v.iter().fold(T::zero(), |a, &x| a + (x - mean) * (x - mean)) / (n - T::one())
}

/// Proportion of variation explained, summarized per target block with
/// credible intervals over the retained iterations.
pub fn variance_explained<T: Real>(
    aligned: &AlignedSamples<T>,
    data: &MultiOmicDataset<T>,
    target: VarianceTarget,
    level: T,
) -> Result<Vec<SummaryRow<T>>> {
    let iters = aligned.len();
    if iters == 0 {
        return Err(Error::invalid("no aligned iterations"));
    }
    match target {
        VarianceTarget::Joint | VarianceTarget::Individual => {
            let mut rows = Vec::with_capacity(data.q());
            for s in 0..data.q() {
                let denom = observed_frob_sq(data, s);
                if denom == T::zero() {
                    return Err(Error::ZeroNormTruth);
                }
                let ratios: Vec<T> = (0..iters)
                    .map(|t| {
                        let structure = match target {
                            VarianceTarget::Joint => aligned.joint_structure(t, s),
                            _ => aligned.indiv_structure(t, s),
                        };
                        let mut num = T::zero();
                        for i in 0..structure.ncols() {
                            for j in 0..structure.nrows() {
                                if !data.mask(s).contains(j, i) {
                                    num += structure[(j, i)] * structure[(j, i)];
                                }
                            }
                        }
                        num / denom
                    })
                    .collect();
                rows.push(summarize_draws(&ratios, level));
            }
            Ok(rows)
        }
        VarianceTarget::OutcomeBlocks => {
            if aligned.coefficients[0].is_none() {
                return Err(Error::invalid(
                    "outcome-block variance needs a chain with coefficients",
                ));
            }
            let q = data.q();
            let mut per_block: Vec<Vec<T>> = vec![Vec::with_capacity(iters); 1 + q];
            for t in 0..iters {
                let beta = aligned.coefficients[t].as_ref().expect("coefficients");
                let fitted = aligned.linear_predictor(t);
                // Residual variance: the draw's noise variance when present
                // (continuous outcome), otherwise the unit probit variance.
                let noise = aligned.noise_vars.as_ref().map_or(T::one(), |nv| nv[t]);
                let denom = sample_variance(&fitted) + noise;
                let r = aligned.joint_scores[t].ncols();
                let joint_contrib = if r > 0 {
                    &aligned.joint_scores[t] * beta.rows(1, r).into_owned()
                } else {
                    DVector::zeros(fitted.len())
                };
                per_block[0].push(sample_variance(&joint_contrib) / denom);
                let mut off = 1 + r;
                for s in 0..q {
                    let r_s = aligned.indiv_scores[t][s].ncols();
                    let contrib = if r_s > 0 {
                        &aligned.indiv_scores[t][s] * beta.rows(off, r_s).into_owned()
                    } else {
                        DVector::zeros(fitted.len())
                    };
                    per_block[1 + s].push(sample_variance(&contrib) / denom);
                    off += r_s;
                }
            }
            Ok(per_block
                .iter()
                .map(|draws| summarize_draws(draws, level))
                .collect())
        }
    }
}

/// Posterior prediction for one sample index: the conditional-mean path and
/// the posterior-predictive path.
#[derive(Debug, Clone)]
pub struct Prediction<T: Real> {
    pub index: usize,
    /// Summary of E[y | X] draws (probit-transformed for binary outcomes).
    pub conditional_mean: SummaryRow<T>,
    /// Summary of posterior-predictive draws of y itself.
    pub predictive: SummaryRow<T>,
}

/// Per-iteration conditional means E[y_i | X] for the given sample indices:
/// the linear predictor, probit-transformed for binary outcomes.
pub fn conditional_mean_draws<T: Real>(
    aligned: &AlignedSamples<T>,
    kind: OutcomeKind,
    indices: &[usize],
) -> Result<Vec<Vec<T>>> {
    let iters = aligned.len();
    if iters == 0 || aligned.coefficients[0].is_none() {
        return Err(Error::invalid("prediction needs a chain with coefficients"));
    }
    let n = aligned.joint_scores[0].nrows();
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::invalid(format!(
            "target index {bad} out of range for {n} samples"
        )));
    }
    let mut draws: Vec<Vec<T>> = vec![Vec::with_capacity(iters); indices.len()];
    for t in 0..iters {
        let lin = aligned.linear_predictor(t);
        for (k, &i) in indices.iter().enumerate() {
            let m = match kind {
                OutcomeKind::Continuous => lin[i],
                OutcomeKind::Binary => norm_cdf(lin[i]),
            };
            draws[k].push(m);
        }
    }
    Ok(draws)
}

/// Posterior predictions for the given sample indices: conditional-mean
/// summaries plus posterior-predictive draws (adding outcome noise for
/// continuous outcomes, Bernoulli draws for binary ones).
pub fn posterior_predict_y<T: Real, R: Rng + ?Sized>(
    aligned: &AlignedSamples<T>,
    kind: OutcomeKind,
    indices: &[usize],
    level: T,
    rng: &mut R,
) -> Result<Vec<Prediction<T>>> {
    let mean_draws = conditional_mean_draws(aligned, kind, indices)?;
    let iters = aligned.len();
    let mut out = Vec::with_capacity(indices.len());
    for (k, &index) in indices.iter().enumerate() {
        let mut predictive = Vec::with_capacity(iters);
        for t in 0..iters {
            let value = match kind {
                OutcomeKind::Continuous => {
                    let sd = aligned
                        .noise_vars
                        .as_ref()
                        .map_or(T::one(), |nv| nv[t])
                        .sqrt();
                    mean_draws[k][t] + sd * T::sample_standard_normal(rng)
                }
                OutcomeKind::Binary => {
                    let u: T = T::sample_open01(rng);
                    if u < mean_draws[k][t] {
                        T::one()
                    } else {
                        T::zero()
                    }
                }
            };
            predictive.push(value);
        }
        out.push(Prediction {
            index,
            conditional_mean: summarize_draws(&mean_draws[k], level),
            predictive: summarize_draws(&predictive, level),
        });
    }
    Ok(out)
}

/// Lloyd's k-means over the rows of `points`, k-means++ seeded, best
/// inertia over the given restarts. Returns per-row cluster labels.
fn kmeans_labels<T: Real, R: Rng + ?Sized>(
    points: &DMatrix<T>,
    k: usize,
    restarts: usize,
    max_iter: usize,
    rng: &mut R,
) -> Vec<usize> {
    let n = points.nrows();
    let d = points.ncols();
    assert!(k >= 1 && k <= n);
    let dist_sq = |a: usize, center: &DVector<T>| -> T {
        let mut acc = T::zero();
        for c in 0..d {
            let diff = points[(a, c)] - center[c];
            acc += diff * diff;
        }
        acc
    };
    let mut best_labels = vec![0usize; n];
    let mut best_inertia = T::max_value().expect("bounded scalar");
    for _ in 0..restarts.max(1) {
        // k-means++ seeding.
        let mut centers: Vec<DVector<T>> = Vec::with_capacity(k);
        let first = rng.gen_range(0..n);
        centers.push(points.row(first).transpose());
        while centers.len() < k {
            let mut weights: Vec<T> = (0..n)
                .map(|i| {
                    centers
                        .iter()
                        .map(|c| dist_sq(i, c))
                        .fold(T::max_value().expect("bounded"), |a, b| a.min(b))
                })
                .collect();
            let total = weights.iter().fold(T::zero(), |a, &w| a + w);
            if total <= T::zero() {
                // All points coincide with a center; any choice works.
                centers.push(points.row(rng.gen_range(0..n)).transpose());
                continue;
            }
            for w in &mut weights {
                *w /= total;
            }
            let u: T = T::sample_open01(rng);
            let mut acc = T::zero();
            let mut chosen = n - 1;
            for (i, &w) in weights.iter().enumerate() {
                acc += w;
                if u <= acc {
                    chosen = i;
                    break;
                }
            }
            centers.push(points.row(chosen).transpose());
        }
        // Lloyd iterations.
        let mut labels = vec![0usize; n];
        for _ in 0..max_iter {
            let mut changed = false;
            for i in 0..n {
                let mut best = T::max_value().expect("bounded");
                let mut arg = 0;
                for (c, center) in centers.iter().enumerate() {
                    let dd = dist_sq(i, center);
                    if dd < best {
                        best = dd;
                        arg = c;
                    }
                }
                if labels[i] != arg {
                    labels[i] = arg;
                    changed = true;
                }
            }
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                if members.is_empty() {
                    continue;
                }
                let mut mean = DVector::zeros(d);
                for &i in &members {
                    mean += points.row(i).transpose();
                }
                *center = mean / T::from_usize(members.len()).expect("count fits");
            }
            if !changed {
                break;
            }
        }
        let inertia = (0..n).fold(T::zero(), |a, i| a + dist_sq(i, &centers[labels[i]]));
        if inertia < best_inertia {
            best_inertia = inertia;
            best_labels = labels;
        }
    }
    best_labels
}

/// Number of k-means restarts per iteration.
pub const KMEANS_RESTARTS: usize = 20;
/// Lloyd iteration cap.
pub const KMEANS_MAX_ITER: usize = 100;

/// Co-clustering frequencies over posterior draws: entry (i, i') is the
/// fraction of retained iterations in which samples i and i' land in the
/// same k-means cluster of the joint structure's columns.
///
/// Clustering runs in factor space: columns of J are `U v_i`, so squared
/// distances equal `(v_i - v_j)' U'U (v_i - v_j)` and k-means on the rows
/// of `V M`, with `M M' = U'U`, is exact and much cheaper.
pub fn cluster_stability<T: Real, R: Rng + ?Sized>(
    aligned: &AlignedSamples<T>,
    k: usize,
    rng: &mut R,
) -> Result<DMatrix<T>> {
    let iters = aligned.len();
    if iters == 0 {
        return Err(Error::invalid("no aligned iterations"));
    }
    let n = aligned.joint_scores[0].nrows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "cluster count {k} out of range for {n} samples"
        )));
    }
    let mut counts = DMatrix::<T>::zeros(n, n);
    for t in 0..iters {
        let v = &aligned.joint_scores[t];
        let r = v.ncols();
        let labels = if r == 0 || k == 1 {
            vec![0usize; n]
        } else {
            let u = crate::linalg::vstack(&aligned.joint_loadings[t]);
            let gram = u.transpose() * &u;
            let eig = gram.symmetric_eigen();
            let mut m = eig.eigenvectors.clone();
            for c in 0..r {
                let root = eig.eigenvalues[c].max(T::zero()).sqrt();
                for row in 0..r {
                    m[(row, c)] *= root;
                }
            }
            let points = v * m;
            kmeans_labels(&points, k, KMEANS_RESTARTS, KMEANS_MAX_ITER, rng)
        };
        for i in 0..n {
            for j in 0..n {
                if labels[i] == labels[j] {
                    counts[(i, j)] += T::one();
                }
            }
        }
    }
    Ok(counts / T::from_usize(iters).expect("iters fit"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn rse_trivial_values() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rse(&s, &s).unwrap(), 0.0);
        let zero = DMatrix::zeros(2, 2);
        assert_relative_eq!(rse(&s, &zero).unwrap(), 1.0, max_relative = 1e-12);
        let truth = DMatrix::<f64>::identity(2, 2);
        let est = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0]);
        assert_relative_eq!(rse(&truth, &est).unwrap(), 0.125, max_relative = 1e-12);
        assert!(matches!(rse(&zero, &s), Err(Error::ZeroNormTruth)));
    }

    #[test]
    fn rse_is_scale_covariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = DMatrix::<f64>::from_fn(5, 4, |_, _| StandardNormal.sample(&mut rng));
        let e = DMatrix::<f64>::from_fn(5, 4, |_, _| StandardNormal.sample(&mut rng));
        let base = rse(&t, &e).unwrap();
        for &c in &[2.0, -3.5, 0.1] {
            let scaled = rse(&(&t * c), &(&e * c)).unwrap();
            assert!((scaled - base).abs() < 1e-12 * (1.0 + base));
        }
    }

    #[test]
    fn coverage_rules() {
        let intervals = vec![(0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0)];
        assert_eq!(coverage(&intervals, &[0.5, 0.1, 0.9, 1.0]), 1.0);
        assert_eq!(coverage(&intervals, &[2.0, -1.0, 5.0, 1.5]), 0.0);
        assert_eq!(coverage(&intervals, &[0.5, 2.0, 0.0, -0.1]), 0.5);
    }

    #[test]
    fn interval_of_mean_zero_draws_contains_zero() {
        let mut hits = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draws: Vec<f64> = (0..20).map(|_| StandardNormal.sample(&mut rng)).collect();
            let row = summarize_draws(&draws, 0.95);
            if row.covers(0.0) {
                hits += 1;
            }
        }
        assert!(hits >= 93, "zero covered in {hits}/100 runs");
    }

    #[test]
    fn summarize_constant_draws() {
        let row = summarize_draws(&[3.25f64; 17], 0.95);
        assert_eq!(row.mean, 3.25);
        assert_eq!(row.width(), 0.0);
        assert_eq!(row.sd, 0.0);
    }

    fn aligned_from_factors(
        iters: usize,
        joint_loadings: Vec<DMatrix<f64>>,
        joint_scores: DMatrix<f64>,
        indiv_loadings: Vec<DMatrix<f64>>,
        indiv_scores: Vec<DMatrix<f64>>,
        beta: Option<DVector<f64>>,
        noise_var: Option<f64>,
    ) -> AlignedSamples<f64> {
        AlignedSamples {
            joint_scores: vec![joint_scores; iters],
            joint_loadings: vec![joint_loadings; iters],
            indiv_scores: vec![indiv_scores; iters],
            indiv_loadings: vec![indiv_loadings; iters],
            coefficients: vec![beta; iters],
            noise_vars: noise_var.map(|v| vec![v; iters]),
            pivot_index: 0,
            joint_permutations: vec![vec![]; iters],
            joint_signs: vec![vec![]; iters],
            indiv_permutations: vec![vec![]; iters],
            indiv_signs: vec![vec![]; iters],
        }
    }

    #[test]
    fn variance_explained_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = DMatrix::<f64>::from_fn(4, 1, |_, _| StandardNormal.sample(&mut rng));
        let v = DMatrix::<f64>::from_fn(6, 1, |_, _| StandardNormal.sample(&mut rng));
        let x = &u * v.transpose();
        let d = crate::data::MultiOmicDataset::from_matrices(
            vec![x],
            vec![crate::data::MissingMask::empty()],
        )
        .unwrap();
        // J = X exactly: joint proportion 1; A = 0: proportion 0.
        let aligned = aligned_from_factors(
            3,
            vec![u.clone()],
            v.clone(),
            vec![DMatrix::zeros(4, 0)],
            vec![DMatrix::zeros(6, 0)],
            None,
            None,
        );
        let joint = variance_explained(&aligned, &d, VarianceTarget::Joint, 0.95).unwrap();
        assert_relative_eq!(joint[0].mean, 1.0, max_relative = 1e-10);
        let indiv = variance_explained(&aligned, &d, VarianceTarget::Individual, 0.95).unwrap();
        assert_eq!(indiv[0].mean, 0.0);
    }

    #[test]
    fn predictions_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 5;
        let v = DMatrix::<f64>::from_fn(n, 1, |_, _| StandardNormal.sample(&mut rng));
        // beta = (c, 0): every conditional mean is c.
        let aligned = aligned_from_factors(
            4,
            vec![DMatrix::zeros(3, 1)],
            v.clone(),
            vec![DMatrix::zeros(3, 0)],
            vec![DMatrix::zeros(n, 0)],
            Some(DVector::from_column_slice(&[2.0, 0.0])),
            Some(0.25),
        );
        let preds = posterior_predict_y(
            &aligned,
            OutcomeKind::Continuous,
            &[0, 3],
            0.95,
            &mut rng,
        )
        .unwrap();
        for p in &preds {
            assert_relative_eq!(p.conditional_mean.mean, 2.0, max_relative = 1e-12);
            assert_eq!(p.conditional_mean.width(), 0.0);
        }
        assert!(posterior_predict_y(
            &aligned,
            OutcomeKind::Continuous,
            &[9],
            0.95,
            &mut rng
        )
        .is_err());

        // Binary with zero linear predictor: probability one half.
        let aligned_b = aligned_from_factors(
            4,
            vec![DMatrix::zeros(3, 1)],
            v,
            vec![DMatrix::zeros(3, 0)],
            vec![DMatrix::zeros(n, 0)],
            Some(DVector::from_column_slice(&[0.0, 0.0])),
            None,
        );
        let preds = posterior_predict_y(&aligned_b, OutcomeKind::Binary, &[1], 0.95, &mut rng)
            .unwrap();
        assert_relative_eq!(preds[0].conditional_mean.mean, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn cluster_stability_separated_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 8;
        // Two well-separated score groups on one factor.
        let mut v = DMatrix::<f64>::zeros(n, 1);
        for i in 0..n {
            let jitter: f64 = StandardNormal.sample(&mut rng);
            v[(i, 0)] = if i < 4 { 5.0 } else { -5.0 } + 0.05 * jitter;
        }
        let u = DMatrix::<f64>::from_fn(6, 1, |_, _| StandardNormal.sample(&mut rng));
        let aligned = aligned_from_factors(
            10,
            vec![u],
            v,
            vec![DMatrix::zeros(6, 0)],
            vec![DMatrix::zeros(n, 0)],
            None,
            None,
        );
        let freq = cluster_stability(&aligned, 2, &mut rng).unwrap();
        for i in 0..n {
            assert_eq!(freq[(i, i)], 1.0);
            for j in 0..n {
                let same_group = (i < 4) == (j < 4);
                if same_group {
                    assert!(freq[(i, j)] >= 0.99, "({i},{j}) {}", freq[(i, j)]);
                } else {
                    assert!(freq[(i, j)] <= 0.01, "({i},{j}) {}", freq[(i, j)]);
                }
            }
        }
        // k = 1: everything clusters together.
        let ones = cluster_stability(&aligned, 1, &mut rng).unwrap();
        assert!(ones.iter().all(|&f| f == 1.0));
        // k > n is rejected.
        assert!(cluster_stability(&aligned, 99, &mut rng).is_err());
    }
}
