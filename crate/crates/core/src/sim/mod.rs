//! Simulation harness: data generators, missingness injectors, baseline
//! imputers, and the three reproducible studies (validation, model
//! comparison, imputation) with their metric tables.
//!
//! Everything here runs at `f64`. Replications execute in parallel on
//! independent seed substreams, so a study report is a pure function of its
//! configuration.

mod generate;
mod impute;
mod missing;
mod studies;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::OutcomeKind;
use crate::error::{Error, Result};

pub use generate::{apply_s2n, generate_factorization_data, GeneratedData, GroundTruth};
pub use impute::{mean_impute, mean_impute_matrix, svd_impute, svd_impute_matrix};
pub use missing::{inject_missingness, RemovedTruth};
pub use studies::{
    run_comparison_study, run_imputation_study, run_study, run_study_with_threads,
    run_validation_study,
};

/// Which study to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    Validation,
    Comparison,
    Imputation,
}

/// Missingness mechanism injected into generated data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "lowercase")]
pub enum MissingSpec {
    None,
    /// Uniformly random entries, `round(fraction * p_s * n)` per source.
    Entrywise { fraction: f64 },
    /// Disjoint random column sets, `cols_per_source` columns per source.
    Blockwise { cols_per_source: usize },
    /// The lowest `fraction` of entries per source, ranked by value.
    Mnar { fraction: f64 },
}

impl MissingSpec {
    pub fn is_none(&self) -> bool {
        matches!(self, MissingSpec::None)
    }
}

/// Declarative inputs of one simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub kind: StudyKind,
    /// Feature counts p_s; the number of sources is `dims.len()`.
    pub dims: Vec<usize>,
    pub n: usize,
    pub joint_rank: usize,
    pub indiv_ranks: Vec<usize>,
    /// Target signal-to-noise ratio for the data, applied by exact scaling;
    /// `None` leaves the generated scale (the validation studies).
    pub s2n_x: Option<f64>,
    /// Target signal-to-noise ratio for the outcome signal.
    pub s2n_y: Option<f64>,
    pub missing: MissingSpec,
    pub outcome: Option<OutcomeKind>,
    /// Fraction of outcomes masked at random (validation studies with
    /// missing responses). The comparison study masks its test half
    /// instead.
    pub outcome_missing_fraction: Option<f64>,
    pub replications: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.iter().any(|&p| p == 0) {
            return Err(Error::invalid("need at least one nonempty source"));
        }
        if self.indiv_ranks.len() != self.dims.len() {
            return Err(Error::dims("one individual rank per source".to_string()));
        }
        if self.n < 2 {
            return Err(Error::invalid("need at least two samples"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("need at least one replication"));
        }
        if self.iterations <= self.burn_in {
            return Err(Error::invalid("iterations must exceed burn-in"));
        }
        match self.missing {
            MissingSpec::Entrywise { fraction } | MissingSpec::Mnar { fraction } => {
                if !(0.0 < fraction && fraction < 1.0) {
                    return Err(Error::invalid("missing fraction must lie in (0, 1)"));
                }
            }
            MissingSpec::Blockwise { cols_per_source } => {
                if cols_per_source == 0 || cols_per_source * self.dims.len() > self.n {
                    return Err(Error::invalid(
                        "blockwise columns must be positive and disjoint across sources",
                    ));
                }
            }
            MissingSpec::None => {}
        }
        if let Some(f) = self.outcome_missing_fraction {
            if !(0.0 < f && f < 1.0) {
                return Err(Error::invalid("outcome missing fraction must lie in (0, 1)"));
            }
            if self.outcome.is_none() {
                return Err(Error::invalid(
                    "outcome missingness requires an outcome kind",
                ));
            }
        }
        if self.kind == StudyKind::Comparison && self.outcome.is_none() {
            return Err(Error::invalid("the comparison study requires an outcome"));
        }
        Ok(())
    }
}

/// Metrics for one evaluation target.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_width: Option<f64>,
}

/// One replication's metric table, keyed by target name.
pub type MetricTable = BTreeMap<String, Metrics>;

/// Study output: per-replication tables, their aggregate (field-wise means),
/// runtime, and the configuration echo.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub per_replication: Vec<MetricTable>,
    pub aggregate: MetricTable,
    pub runtime_secs: f64,
}

/// Field-wise mean of per-replication tables.
pub(crate) fn aggregate_tables(tables: &[MetricTable]) -> MetricTable {
    let mut out = MetricTable::new();
    if tables.is_empty() {
        return out;
    }
    for key in tables[0].keys() {
        let mut agg = Metrics::default();
        let mut n_rse = 0usize;
        let mut n_cov = 0usize;
        let mut n_wid = 0usize;
        for t in tables {
            let m = t.get(key).copied().unwrap_or_default();
            if let Some(v) = m.rse {
                agg.rse = Some(agg.rse.unwrap_or(0.0) + v);
                n_rse += 1;
            }
            if let Some(v) = m.coverage {
                agg.coverage = Some(agg.coverage.unwrap_or(0.0) + v);
                n_cov += 1;
            }
            if let Some(v) = m.ci_width {
                agg.ci_width = Some(agg.ci_width.unwrap_or(0.0) + v);
                n_wid += 1;
            }
        }
        agg.rse = agg.rse.map(|v| v / n_rse as f64);
        agg.coverage = agg.coverage.map(|v| v / n_cov as f64);
        agg.ci_width = agg.ci_width.map(|v| v / n_wid as f64);
        out.insert(key.clone(), agg);
    }
    out
}

/// Deterministic per-replication seed derivation (splitmix64 of the base
/// seed and the replication index), so parallel replications use
/// independent streams.
pub(crate) fn substream_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named study presets shipped with the crate: desk-scale versions run in
/// minutes; full-scale versions use the reference benchmark dimensions.
pub fn preset(name: &str) -> Option<StudyConfig> {
    let desk_validation = StudyConfig {
        kind: StudyKind::Validation,
        dims: vec![40, 60],
        n: 25,
        joint_rank: 1,
        indiv_ranks: vec![1, 1],
        s2n_x: None,
        s2n_y: None,
        missing: MissingSpec::None,
        outcome: None,
        outcome_missing_fraction: None,
        replications: 50,
        iterations: 1000,
        burn_in: 500,
        seed: 20_240_801,
        solver_tol: 1e-7,
        solver_max_iter: 2000,
    };
    match name {
        "validation-desk" => Some(desk_validation),
        "validation-continuous-desk" => Some(StudyConfig {
            outcome: Some(OutcomeKind::Continuous),
            ..desk_validation
        }),
        "validation-binary-desk" => Some(StudyConfig {
            outcome: Some(OutcomeKind::Binary),
            iterations: 2000,
            burn_in: 1000,
            ..desk_validation
        }),
        "validation-missing-desk" => Some(StudyConfig {
            missing: MissingSpec::Entrywise { fraction: 0.3 },
            iterations: 2000,
            burn_in: 1000,
            ..desk_validation
        }),
        "validation-full" => Some(StudyConfig {
            dims: vec![100, 150],
            n: 50,
            replications: 100,
            iterations: 2000,
            burn_in: 1000,
            ..desk_validation
        }),
        "comparison-desk" => Some(StudyConfig {
            kind: StudyKind::Comparison,
            dims: vec![100, 100],
            n: 100,
            s2n_x: Some(9.0),
            s2n_y: Some(1.0),
            outcome: Some(OutcomeKind::Continuous),
            replications: 20,
            iterations: 2000,
            burn_in: 1000,
            ..desk_validation
        }),
        "comparison-full" => Some(StudyConfig {
            kind: StudyKind::Comparison,
            dims: vec![100, 100],
            n: 200,
            s2n_x: Some(9.0),
            s2n_y: Some(1.0),
            outcome: Some(OutcomeKind::Continuous),
            replications: 100,
            iterations: 2000,
            burn_in: 1000,
            ..desk_validation
        }),
        "imputation-desk" => Some(StudyConfig {
            kind: StudyKind::Imputation,
            dims: vec![80, 80],
            n: 80,
            joint_rank: 5,
            indiv_ranks: vec![5, 5],
            s2n_x: Some(9.0),
            missing: MissingSpec::Entrywise { fraction: 0.1 },
            replications: 20,
            iterations: 2000,
            burn_in: 1000,
            ..desk_validation
        }),
        "imputation-full" => Some(StudyConfig {
            kind: StudyKind::Imputation,
            dims: vec![100, 100],
            n: 100,
            joint_rank: 5,
            indiv_ranks: vec![5, 5],
            s2n_x: Some(9.0),
            missing: MissingSpec::Entrywise { fraction: 0.1 },
            replications: 100,
            iterations: 2000,
            burn_in: 1000,
            ..desk_validation
        }),
        "noise-only-desk" => Some(StudyConfig {
            kind: StudyKind::Validation,
            dims: vec![50, 50],
            n: 50,
            joint_rank: 0,
            indiv_ranks: vec![0, 0],
            replications: 100,
            ..desk_validation
        }),
        _ => None,
    }
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: &[&str] = &[
    "validation-desk",
    "validation-continuous-desk",
    "validation-binary-desk",
    "validation-missing-desk",
    "validation-full",
    "comparison-desk",
    "comparison-full",
    "imputation-desk",
    "imputation-full",
    "noise-only-desk",
];
