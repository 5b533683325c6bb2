//! Summary-table writers for the `summarize`, `fit`, and `predict`
//! commands.

use std::fs;
use std::path::Path;

use anyhow::Result;
use multifac_core::align::AlignedSamples;
use multifac_core::data::{MultiOmicDataset, OutcomeKind, OutcomeSpec};
use multifac_core::summary::{
    cluster_stability, posterior_predict_y, summarize_draws, variance_explained, SummaryRow,
    VarianceTarget,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LEVEL: f64 = 0.95;

fn fmt(v: f64) -> String {
    format!("{v:.6e}")
}

fn row_fields(row: &SummaryRow<f64>) -> [String; 4] {
    [fmt(row.mean), fmt(row.sd), fmt(row.lower), fmt(row.upper)]
}

/// Per-entry posterior summaries of the joint and individual structures,
/// in long format, plus the heatmap-ready posterior-mean table.
pub fn write_structure_summaries(
    dir: &Path,
    aligned: &AlignedSamples<f64>,
    data: &MultiOmicDataset<f64>,
) -> Result<()> {
    let iters = aligned.len();
    let mut w = csv::Writer::from_path(dir.join("structures.csv"))?;
    w.write_record([
        "structure",
        "source",
        "feature_id",
        "sample_id",
        "mean",
        "sd",
        "lower",
        "upper",
    ])?;
    let mut heat = csv::Writer::from_path(dir.join("heatmap_long.csv"))?;
    heat.write_record(["source", "feature_id", "sample_id", "structure", "value"])?;

    for s in 0..data.q() {
        let p_s = data.source(s).nrows();
        let n = data.n();
        for which in ["joint", "individual"] {
            // Collect all iterations of this block once.
            let draws: Vec<nalgebra::DMatrix<f64>> = (0..iters)
                .map(|t| {
                    if which == "joint" {
                        aligned.joint_structure(t, s)
                    } else {
                        aligned.indiv_structure(t, s)
                    }
                })
                .collect();
            let mut entry = Vec::with_capacity(iters);
            for j in 0..p_s {
                for i in 0..n {
                    entry.clear();
                    for d in &draws {
                        entry.push(d[(j, i)]);
                    }
                    let row = summarize_draws(&entry, LEVEL);
                    let fields = row_fields(&row);
                    w.write_record([
                        which,
                        &s.to_string(),
                        &data.feature_ids(s)[j],
                        &data.sample_ids()[i],
                        &fields[0],
                        &fields[1],
                        &fields[2],
                        &fields[3],
                    ])?;
                    heat.write_record([
                        &s.to_string(),
                        &data.feature_ids(s)[j],
                        &data.sample_ids()[i],
                        which,
                        &fields[0],
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    heat.flush()?;
    Ok(())
}

/// Aligned coefficient summaries, one row per coefficient.
pub fn write_beta_summary(dir: &Path, aligned: &AlignedSamples<f64>) -> Result<()> {
    if aligned.coefficients[0].is_none() {
        return Ok(());
    }
    let iters = aligned.len();
    let k = aligned.coefficients[0].as_ref().unwrap().len();
    let r = aligned.joint_scores[0].ncols();
    let q = aligned.indiv_scores[0].len();
    let mut w = csv::Writer::from_path(dir.join("beta.csv"))?;
    w.write_record(["block", "index", "mean", "sd", "lower", "upper"])?;
    let block_of = |idx: usize| -> (String, usize) {
        if idx == 0 {
            return ("intercept".into(), 0);
        }
        if idx < 1 + r {
            return ("joint".into(), idx - 1);
        }
        let mut off = 1 + r;
        for s in 0..q {
            let r_s = aligned.indiv_scores[0][s].ncols();
            if idx < off + r_s {
                return (format!("indiv_{s}"), idx - off);
            }
            off += r_s;
        }
        ("unknown".into(), idx)
    };
    for idx in 0..k {
        let draws: Vec<f64> = (0..iters)
            .map(|t| aligned.coefficients[t].as_ref().unwrap()[idx])
            .collect();
        let row = summarize_draws(&draws, LEVEL);
        let (block, within) = block_of(idx);
        let fields = row_fields(&row);
        w.write_record([
            block.as_str(),
            &within.to_string(),
            &fields[0],
            &fields[1],
            &fields[2],
            &fields[3],
        ])?;
    }
    w.flush()?;

    if let Some(nv) = &aligned.noise_vars {
        let mut w = csv::Writer::from_path(dir.join("noise_var.csv"))?;
        w.write_record(["mean", "sd", "lower", "upper"])?;
        let row = summarize_draws(nv, LEVEL);
        w.write_record(row_fields(&row))?;
        w.flush()?;
    }
    Ok(())
}

/// Variance-explained table: joint and individual per source, plus outcome
/// blocks when coefficients are present.
pub fn write_variance_explained(
    dir: &Path,
    aligned: &AlignedSamples<f64>,
    data: &MultiOmicDataset<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("variance_explained.csv"))?;
    w.write_record(["block", "source", "mean", "sd", "lower", "upper"])?;
    let joint = variance_explained(aligned, data, VarianceTarget::Joint, LEVEL)?;
    let indiv = variance_explained(aligned, data, VarianceTarget::Individual, LEVEL)?;
    for (s, row) in joint.iter().enumerate() {
        let f = row_fields(row);
        w.write_record(["joint", &s.to_string(), &f[0], &f[1], &f[2], &f[3]])?;
    }
    for (s, row) in indiv.iter().enumerate() {
        let f = row_fields(row);
        w.write_record(["individual", &s.to_string(), &f[0], &f[1], &f[2], &f[3]])?;
    }
    if aligned.coefficients[0].is_some() {
        let blocks = variance_explained(aligned, data, VarianceTarget::OutcomeBlocks, LEVEL)?;
        for (b, row) in blocks.iter().enumerate() {
            let name = if b == 0 {
                "outcome_joint".to_string()
            } else {
                format!("outcome_indiv_{}", b - 1)
            };
            let f = row_fields(row);
            w.write_record([name.as_str(), "", &f[0], &f[1], &f[2], &f[3]])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Fitted/predicted outcome summaries for every sample, and the
/// co-clustering frequency matrix.
pub fn write_predictions_and_clusters(
    dir: &Path,
    aligned: &AlignedSamples<f64>,
    data: &MultiOmicDataset<f64>,
    outcome: Option<&OutcomeSpec<f64>>,
    cluster_k: usize,
    seed: u64,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if let Some(o) = outcome {
        let indices: Vec<usize> = (0..data.n()).collect();
        let preds = posterior_predict_y(aligned, o.kind, &indices, LEVEL, &mut rng)?;
        let mut w = csv::Writer::from_path(dir.join("predictions.csv"))?;
        w.write_record([
            "sample_id",
            "observed",
            "mean",
            "sd",
            "lower",
            "upper",
            "pred_lower",
            "pred_upper",
        ])?;
        for p in &preds {
            let i = p.index;
            let f = row_fields(&p.conditional_mean);
            w.write_record([
                data.sample_ids()[i].as_str(),
                if o.is_missing(i) { "0" } else { "1" },
                &f[0],
                &f[1],
                &f[2],
                &f[3],
                &fmt(p.predictive.lower),
                &fmt(p.predictive.upper),
            ])?;
        }
        w.flush()?;
    }

    let freq = cluster_stability(aligned, cluster_k, &mut rng)?;
    let mut w = csv::Writer::from_path(dir.join("cocluster.csv"))?;
    let mut header = vec!["sample_id".to_string()];
    header.extend(data.sample_ids().iter().cloned());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut row = vec![data.sample_ids()[i].clone()];
        for j in 0..data.n() {
            row.push(format!("{:.4}", freq[(i, j)]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Posterior summaries of the imputed data entries, on the working scale
/// and mapped back to the original scale.
pub fn write_imputation_summary(
    dir: &Path,
    chain: &multifac_core::Chain,
    data: &MultiOmicDataset<f64>,
) -> Result<()> {
    if !data.any_missing() {
        return Ok(());
    }
    let retained = chain.retained();
    let mut w = csv::Writer::from_path(dir.join("imputations.csv"))?;
    w.write_record([
        "source",
        "feature_id",
        "sample_id",
        "mean",
        "sd",
        "lower",
        "upper",
        "mean_original_scale",
    ])?;
    for s in 0..data.q() {
        for (k, &(j, i)) in data.mask(s).indices().iter().enumerate() {
            let draws: Vec<f64> = retained.iter().map(|st| st.imputed_x[s][k]).collect();
            let row = summarize_draws(&draws, LEVEL);
            let f = row_fields(&row);
            w.write_record([
                s.to_string().as_str(),
                &data.feature_ids(s)[j],
                &data.sample_ids()[i],
                &f[0],
                &f[1],
                &f[2],
                &f[3],
                &fmt(data.to_original_scale(s, j, row.mean)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes every summary artifact into `dir`.
pub fn write_all(
    dir: &Path,
    aligned: &AlignedSamples<f64>,
    chain: &multifac_core::Chain,
    data: &MultiOmicDataset<f64>,
    outcome: Option<&OutcomeSpec<f64>>,
    cluster_k: usize,
    seed: u64,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_structure_summaries(dir, aligned, data)?;
    write_beta_summary(dir, aligned)?;
    write_variance_explained(dir, aligned, data)?;
    write_predictions_and_clusters(dir, aligned, data, outcome, cluster_k, seed)?;
    write_imputation_summary(dir, chain, data)?;
    Ok(())
}

/// Convenience: outcome kind parser shared by several commands.
pub fn parse_outcome_kind(s: &str) -> std::result::Result<OutcomeKind, String> {
    match s {
        "continuous" => Ok(OutcomeKind::Continuous),
        "binary" => Ok(OutcomeKind::Binary),
        other => Err(format!(
            "unknown outcome type `{other}` (expected `continuous` or `binary`)"
        )),
    }
}
