//! The three reproducible studies: prior-draw calibration (validation),
//! model comparison with a held-out outcome, and imputation benchmarking
//! against the single-imputation baselines.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::OutcomeKind;
use crate::error::Result;
use crate::gibbs::{run_sampler_observed, PriorSpec, SamplerConfig};
use crate::solver::{decompose, PenaltySpec, SolverOptions};
use crate::stats::norm_cdf;
use crate::summary::summarize_draws;

use super::generate::generate_factorization_data;
use super::impute::{mean_impute, svd_impute};
use super::missing::inject_missingness;
use super::{
    aggregate_tables, substream_seed, MetricTable, Metrics, StudyConfig, StudyKind, StudyReport,
};

/// Credible-interval level used throughout the studies.
const LEVEL: f64 = 0.95;
/// Fixed rank of the SVD-imputation baseline.
const SVD_IMPUTE_RANK: usize = 4;
const SVD_IMPUTE_TOL: f64 = 1e-6;
const SVD_IMPUTE_MAX_ITER: usize = 500;

/// Runs the study named by the configuration.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    match config.kind {
        StudyKind::Validation => run_validation_study(config),
        StudyKind::Comparison => run_comparison_study(config),
        StudyKind::Imputation => run_imputation_study(config),
    }
}

fn run_replications(
    config: &StudyConfig,
    rep_fn: impl Fn(usize) -> Result<MetricTable> + Sync + Send,
) -> Result<StudyReport> {
    config.validate()?;
    let start = Instant::now();
    let per_replication: Vec<MetricTable> = (0..config.replications)
        .into_par_iter()
        .map(rep_fn)
        .collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate_tables(&per_replication);
    Ok(StudyReport {
        config: config.clone(),
        per_replication,
        aggregate,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Coverage / RSE / mean-width metrics of per-entry draws against truths,
/// restricted to the entry indices in `subset`.
fn entry_metrics(draws: &[Vec<f64>], truths: &[f64], subset: &[usize]) -> Metrics {
    let mut hits = 0usize;
    let mut width = 0.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for &idx in subset {
        let row = summarize_draws(&draws[idx], LEVEL);
        if row.covers(truths[idx]) {
            hits += 1;
        }
        width += row.width();
        num += (row.mean - truths[idx]) * (row.mean - truths[idx]);
        den += truths[idx] * truths[idx];
    }
    let m = subset.len() as f64;
    Metrics {
        rse: (den > 0.0).then(|| num / den),
        coverage: Some(hits as f64 / m),
        ci_width: Some(width / m),
    }
}

/// Prior-draw calibration: truth simulated from the model's priors, fit
/// with matched hyperparameters, and coverage / RSE / interval width
/// reported per target (observed and masked entries separately when
/// missingness is injected).
pub fn run_validation_study(config: &StudyConfig) -> Result<StudyReport> {
    run_replications(config, |rep| {
        let rep = rep as u64;
        let g = generate_factorization_data(config, substream_seed(config.seed, 4 * rep))?;
        let (data, _removed) = inject_missingness(
            &g.dataset,
            &config.missing,
            substream_seed(config.seed, 4 * rep + 1),
        )?;
        let outcome = match (&g.outcome, config.outcome_missing_fraction) {
            (Some(o), Some(f)) => {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(substream_seed(
                    config.seed,
                    4 * rep + 2,
                ));
                let mut idx: Vec<usize> = (0..config.n).collect();
                idx.shuffle(&mut rng);
                let count = (f * config.n as f64).round() as usize;
                Some(o.with_missing(idx[..count].to_vec())?)
            }
            (Some(o), None) => Some(o.clone()),
            (None, _) => None,
        };

        let pen = PenaltySpec::defaults(config.n, &config.dims);
        let mode = decompose(
            &data,
            &pen,
            &SolverOptions {
                tol: config.solver_tol,
                max_iter: config.solver_max_iter,
                init: None,
            },
        )?;
        let priors = PriorSpec::unit_variance(data.q());
        let scfg = SamplerConfig {
            iterations: config.iterations,
            burn_in: config.burn_in,
            seed: substream_seed(config.seed, 4 * rep + 3),
        };

        let n = config.n;
        let p: usize = config.dims.iter().sum();
        let retained = config.iterations - config.burn_in;
        let mut j_draws: Vec<Vec<f64>> = vec![Vec::with_capacity(retained); p * n];
        let mut a_draws: Vec<Vec<f64>> = vec![Vec::with_capacity(retained); p * n];
        let mut ey_draws: Vec<Vec<f64>> = vec![Vec::with_capacity(retained); n];
        let mut tau_draws: Vec<f64> = Vec::with_capacity(retained);
        let binary = matches!(config.outcome, Some(OutcomeKind::Binary));
        run_sampler_observed(&data, outcome.as_ref(), &mode, &priors, &scfg, |it, state, _| {
            if it < scfg.burn_in {
                return;
            }
            let mut row0 = 0;
            for s in 0..data.q() {
                let j = state.joint_structure(s);
                let a = state.indiv_structure(s);
                for i in 0..n {
                    for r in 0..j.nrows() {
                        j_draws[(row0 + r) * n + i].push(j[(r, i)]);
                        a_draws[(row0 + r) * n + i].push(a[(r, i)]);
                    }
                }
                row0 += j.nrows();
            }
            if outcome.is_some() {
                let lin = state.linear_predictor();
                for i in 0..n {
                    ey_draws[i].push(if binary { norm_cdf(lin[i]) } else { lin[i] });
                }
                if let Some(t) = state.noise_var {
                    tau_draws.push(t);
                }
            }
        })?;

        // Entry truths, flattened to match the accumulators.
        let mut j_truth = vec![0.0; p * n];
        let mut a_truth = vec![0.0; p * n];
        let mut observed = Vec::with_capacity(p * n);
        let mut masked = Vec::new();
        let mut row0 = 0;
        for s in 0..data.q() {
            let p_s = data.source(s).nrows();
            for r in 0..p_s {
                for i in 0..n {
                    let idx = (row0 + r) * n + i;
                    j_truth[idx] = g.truth.joint[s][(r, i)];
                    a_truth[idx] = g.truth.indiv[s][(r, i)];
                    if data.mask(s).contains(r, i) {
                        masked.push(idx);
                    } else {
                        observed.push(idx);
                    }
                }
            }
            row0 += p_s;
        }

        let mut table = MetricTable::new();
        table.insert("joint".into(), entry_metrics(&j_draws, &j_truth, &observed));
        table.insert("indiv".into(), entry_metrics(&a_draws, &a_truth, &observed));
        if !masked.is_empty() {
            table.insert(
                "joint_missing".into(),
                entry_metrics(&j_draws, &j_truth, &masked),
            );
            table.insert(
                "indiv_missing".into(),
                entry_metrics(&a_draws, &a_truth, &masked),
            );
        }
        if let Some(o) = &outcome {
            let lin = g.truth.linear_predictor.as_ref().expect("truth present");
            let ey_truth: Vec<f64> = (0..n)
                .map(|i| if binary { norm_cdf(lin[i]) } else { lin[i] })
                .collect();
            let obs_y: Vec<usize> = (0..n).filter(|&i| !o.is_missing(i)).collect();
            table.insert("ey".into(), entry_metrics(&ey_draws, &ey_truth, &obs_y));
            if o.n_missing() > 0 {
                let miss_y: Vec<usize> = o.missing().to_vec();
                table.insert(
                    "ey_missing".into(),
                    entry_metrics(&ey_draws, &ey_truth, &miss_y),
                );
            }
            if let Some(tau0) = g.truth.tau_sq {
                let row = summarize_draws(&tau_draws, LEVEL);
                table.insert(
                    "tau_sq".into(),
                    Metrics {
                        rse: Some((row.mean - tau0) * (row.mean - tau0) / (tau0 * tau0)),
                        coverage: Some(if row.covers(tau0) { 1.0 } else { 0.0 }),
                        ci_width: Some(row.width()),
                    },
                );
            }
        }
        Ok(table)
    })
}

/// Posterior-mean structure estimates mapped back to the generated scale.
fn structure_rse(
    truth: &[DMatrix<f64>],
    sums: &[DMatrix<f64>],
    count: usize,
    noise_sd: &[f64],
) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, t) in truth.iter().enumerate() {
        for i in 0..t.ncols() {
            for j in 0..t.nrows() {
                let est = sums[s][(j, i)] / count as f64 * noise_sd[s];
                num += (est - t[(j, i)]) * (est - t[(j, i)]);
                den += t[(j, i)] * t[(j, i)];
            }
        }
    }
    num / den
}

/// Model-comparison study: a semi-supervised fit on the full data with the
/// test half's outcomes masked; reports structure recovery and recovery /
/// coverage of the held-out conditional means.
pub fn run_comparison_study(config: &StudyConfig) -> Result<StudyReport> {
    run_replications(config, |rep| {
        let rep = rep as u64;
        let g = generate_factorization_data(config, substream_seed(config.seed, 4 * rep))?;
        let outcome_full = g.outcome.as_ref().expect("comparison requires an outcome");

        // Random half split.
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(substream_seed(config.seed, 4 * rep + 1));
        let mut idx: Vec<usize> = (0..config.n).collect();
        idx.shuffle(&mut rng);
        let test: Vec<usize> = {
            let mut t = idx[..config.n / 2].to_vec();
            t.sort_unstable();
            t
        };
        let outcome = outcome_full.with_missing(test.clone())?;

        let data = g.dataset.center_rows()?.scale_to_unit_error()?;
        let pen = PenaltySpec::defaults(config.n, &config.dims);
        let mode = decompose(
            &data,
            &pen,
            &SolverOptions {
                tol: config.solver_tol,
                max_iter: config.solver_max_iter,
                init: None,
            },
        )?;
        let priors = PriorSpec::from_penalties(&pen);
        let scfg = SamplerConfig {
            iterations: config.iterations,
            burn_in: config.burn_in,
            seed: substream_seed(config.seed, 4 * rep + 3),
        };

        let binary = outcome.kind == OutcomeKind::Binary;
        let retained = config.iterations - config.burn_in;
        let mut j_sum: Vec<DMatrix<f64>> = config
            .dims
            .iter()
            .map(|&p| DMatrix::zeros(p, config.n))
            .collect();
        let mut a_sum = j_sum.clone();
        let mut ey_draws: Vec<Vec<f64>> = vec![Vec::with_capacity(retained); test.len()];
        run_sampler_observed(&data, Some(&outcome), &mode, &priors, &scfg, |it, state, _| {
            if it < scfg.burn_in {
                return;
            }
            for s in 0..data.q() {
                j_sum[s] += state.joint_structure(s);
                a_sum[s] += state.indiv_structure(s);
            }
            let lin = state.linear_predictor();
            for (k, &i) in test.iter().enumerate() {
                ey_draws[k].push(if binary { norm_cdf(lin[i]) } else { lin[i] });
            }
        })?;

        let lin_truth = g.truth.linear_predictor.as_ref().expect("truth present");
        let ey_truth: Vec<f64> = test
            .iter()
            .map(|&i| {
                if binary {
                    norm_cdf(lin_truth[i])
                } else {
                    lin_truth[i]
                }
            })
            .collect();
        let subset: Vec<usize> = (0..test.len()).collect();

        let mut table = MetricTable::new();
        let noise_sd = &data.scaling().noise_sd;
        table.insert(
            "joint".into(),
            Metrics {
                rse: Some(structure_rse(&g.truth.joint, &j_sum, retained, noise_sd)),
                coverage: None,
                ci_width: None,
            },
        );
        table.insert(
            "indiv".into(),
            Metrics {
                rse: Some(structure_rse(&g.truth.indiv, &a_sum, retained, noise_sd)),
                coverage: None,
                ci_width: None,
            },
        );
        table.insert("ey_test".into(), entry_metrics(&ey_draws, &ey_truth, &subset));
        Ok(table)
    })
}

/// Imputation study: posterior-mean multiple imputation against the
/// mean-imputation and per-source / combined SVD-imputation baselines,
/// evaluated on the removed true values (original scale).
pub fn run_imputation_study(config: &StudyConfig) -> Result<StudyReport> {
    run_replications(config, |rep| {
        let rep = rep as u64;
        let g = generate_factorization_data(config, substream_seed(config.seed, 4 * rep))?;
        let (masked, removed) = inject_missingness(
            &g.dataset,
            &config.missing,
            substream_seed(config.seed, 4 * rep + 1),
        )?;

        let data = masked.center_rows()?.scale_to_unit_error()?;
        let pen = PenaltySpec::defaults(config.n, &config.dims);
        let mode = decompose(
            &data,
            &pen,
            &SolverOptions {
                tol: config.solver_tol,
                max_iter: config.solver_max_iter,
                init: None,
            },
        )?;
        let priors = PriorSpec::from_penalties(&pen);
        let scfg = SamplerConfig {
            iterations: config.iterations,
            burn_in: config.burn_in,
            seed: substream_seed(config.seed, 4 * rep + 3),
        };

        // Imputation draws per masked entry, mapped back to the original
        // scale (the affine map preserves quantiles exactly).
        let total_masked: usize = (0..data.q()).map(|s| data.mask(s).len()).sum();
        let retained = config.iterations - config.burn_in;
        let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(retained); total_masked];
        run_sampler_observed(&data, None, &mode, &priors, &scfg, |it, state, _| {
            if it < scfg.burn_in {
                return;
            }
            let mut offset = 0;
            for s in 0..data.q() {
                for (k, &(j, _i)) in data.mask(s).indices().iter().enumerate() {
                    let orig = data.to_original_scale(s, j, state.imputed_x[s][k]);
                    draws[offset + k].push(orig);
                }
                offset += data.mask(s).len();
            }
        })?;

        let truths: Vec<f64> = removed.per_source.concat();
        let subset: Vec<usize> = (0..truths.len()).collect();
        let mut table = MetricTable::new();
        table.insert("imputation".into(), entry_metrics(&draws, &truths, &subset));

        // Baselines run on the raw masked data.
        let baseline_rse = |filled: &[DMatrix<f64>]| -> f64 {
            let mut num = 0.0;
            let mut den = 0.0;
            for s in 0..masked.q() {
                for (k, &(j, i)) in masked.mask(s).indices().iter().enumerate() {
                    let t = removed.per_source[s][k];
                    let e = filled[s][(j, i)];
                    num += (e - t) * (e - t);
                    den += t * t;
                }
            }
            num / den
        };
        table.insert(
            "mean_impute".into(),
            Metrics {
                rse: Some(baseline_rse(&mean_impute(&masked))),
                ..Default::default()
            },
        );
        table.insert(
            "svd_impute_source".into(),
            Metrics {
                rse: Some(baseline_rse(&svd_impute(
                    &masked,
                    SVD_IMPUTE_RANK,
                    SVD_IMPUTE_TOL,
                    SVD_IMPUTE_MAX_ITER,
                    false,
                )?)),
                ..Default::default()
            },
        );
        table.insert(
            "svd_impute_combined".into(),
            Metrics {
                rse: Some(baseline_rse(&svd_impute(
                    &masked,
                    SVD_IMPUTE_RANK,
                    SVD_IMPUTE_TOL,
                    SVD_IMPUTE_MAX_ITER,
                    true,
                )?)),
                ..Default::default()
            },
        );
        Ok(table)
    })
}

/// Runs a study on a caller-provided thread count (0 = the rayon default).
pub fn run_study_with_threads(config: &StudyConfig, threads: usize) -> Result<StudyReport> {
    if threads == 0 {
        return run_study(config);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| crate::error::Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| run_study(config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{preset, MissingSpec};

    fn tiny(kind: StudyKind) -> StudyConfig {
        let mut cfg = preset(match kind {
            StudyKind::Validation => "validation-desk",
            StudyKind::Comparison => "comparison-desk",
            StudyKind::Imputation => "imputation-desk",
        })
        .unwrap();
        cfg.replications = 2;
        cfg.iterations = 60;
        cfg.burn_in = 30;
        match kind {
            StudyKind::Validation => {}
            StudyKind::Comparison => {
                cfg.dims = vec![20, 20];
                cfg.n = 16;
            }
            StudyKind::Imputation => {
                cfg.dims = vec![24, 24];
                cfg.n = 24;
                cfg.joint_rank = 2;
                cfg.indiv_ranks = vec![2, 2];
            }
        }
        cfg
    }

    #[test]
    fn validation_study_smoke_and_determinism() {
        let mut cfg = tiny(StudyKind::Validation);
        cfg.dims = vec![12, 14];
        cfg.n = 10;
        let a = run_validation_study(&cfg).unwrap();
        let b = run_validation_study(&cfg).unwrap();
        assert_eq!(a.per_replication, b.per_replication);
        assert!(a.aggregate.contains_key("joint"));
        assert!(a.aggregate["joint"].coverage.is_some());
        // Aggregates equal field-wise means.
        let mean_rse: f64 = a
            .per_replication
            .iter()
            .map(|t| t["joint"].rse.unwrap())
            .sum::<f64>()
            / a.per_replication.len() as f64;
        assert!((a.aggregate["joint"].rse.unwrap() - mean_rse).abs() < 1e-12);
    }

    #[test]
    fn validation_with_missing_reports_masked_targets() {
        let mut cfg = tiny(StudyKind::Validation);
        cfg.dims = vec![12, 14];
        cfg.n = 10;
        cfg.missing = MissingSpec::Entrywise { fraction: 0.2 };
        let r = run_validation_study(&cfg).unwrap();
        assert!(r.aggregate.contains_key("joint_missing"));
        assert!(r.aggregate.contains_key("indiv_missing"));
    }

    #[test]
    fn comparison_study_smoke() {
        let cfg = tiny(StudyKind::Comparison);
        let r = run_comparison_study(&cfg).unwrap();
        assert!(r.aggregate["ey_test"].coverage.is_some());
        assert!(r.aggregate["joint"].rse.is_some());
    }

    #[test]
    fn imputation_study_smoke() {
        let mut cfg = tiny(StudyKind::Imputation);
        cfg.missing = MissingSpec::Entrywise { fraction: 0.1 };
        let r = run_imputation_study(&cfg).unwrap();
        for key in ["imputation", "mean_impute", "svd_impute_source", "svd_impute_combined"] {
            assert!(r.aggregate.contains_key(key), "missing {key}");
        }
        assert!(r.aggregate["imputation"].coverage.is_some());
    }
}
