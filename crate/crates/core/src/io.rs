//! File formats: CSV datasets and outcomes, chain dumps, and study
//! reports. Everything here is `f64`.
//!
//! Source CSVs hold features as rows: the header carries sample ids (first
//! cell is a feature-id column label), each row starts with the feature id,
//! and missing entries are empty cells or the literal `NA`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::data::{MissingMask, MultiOmicDataset, OutcomeKind, OutcomeSpec, ScalingMeta};
use crate::error::{Error, Result};
use crate::gibbs::{ChainMeta, DecompositionState, PosteriorSamples};
use crate::sim::StudyReport;

/// Parsing options for dataset CSVs.
#[derive(Debug, Clone)]
pub struct FormatOpts {
    /// Tokens treated as missing (besides the empty cell).
    pub na_tokens: Vec<String>,
    /// Reorder later sources' columns to the first source's sample order
    /// (matching on sample id) instead of erroring on order mismatches.
    pub reorder: bool,
}

impl Default for FormatOpts {
    fn default() -> Self {
        Self {
            na_tokens: vec!["NA".to_string()],
            reorder: false,
        }
    }
}

fn is_missing_token(tok: &str, opts: &FormatOpts) -> bool {
    tok.is_empty() || opts.na_tokens.iter().any(|t| t == tok)
}

/// One parsed source CSV.
struct ParsedSource {
    sample_ids: Vec<String>,
    feature_ids: Vec<String>,
    values: DMatrix<f64>,
    missing: Vec<(usize, usize)>,
}

fn parse_source_csv(path: &Path, opts: &FormatOpts) -> Result<ParsedSource> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::invalid(format!(
            "{}: need a feature-id column plus at least one sample column",
            path.display()
        )));
    }
    let sample_ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let n = sample_ids.len();
    let mut feature_ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut missing = Vec::new();
    for (j, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != n + 1 {
            return Err(Error::invalid(format!(
                "{} row {}: {} cells, expected {}",
                path.display(),
                j + 2,
                record.len(),
                n + 1
            )));
        }
        feature_ids.push(record[0].to_string());
        let mut row = Vec::with_capacity(n);
        for (i, cell) in record.iter().skip(1).enumerate() {
            if is_missing_token(cell, opts) {
                missing.push((j, i));
                row.push(0.0);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::invalid(format!(
                        "{} row {} column {}: cannot parse `{}` as a number",
                        path.display(),
                        j + 2,
                        i + 2,
                        cell
                    ))
                })?;
                row.push(v);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::invalid(format!("{}: no feature rows", path.display())));
    }
    let values = DMatrix::from_fn(rows.len(), n, |j, i| rows[j][i]);
    Ok(ParsedSource {
        sample_ids,
        feature_ids,
        values,
        missing,
    })
}

/// Loads column-linked sources from CSVs. All files must carry the same
/// sample ids; with `opts.reorder` set, later sources are reordered to the
/// first source's sample order, otherwise a different order is an error.
pub fn load_dataset(paths: &[PathBuf], opts: &FormatOpts) -> Result<MultiOmicDataset<f64>> {
    if paths.is_empty() {
        return Err(Error::invalid("no source files given"));
    }
    let mut parsed = Vec::with_capacity(paths.len());
    for p in paths {
        parsed.push(parse_source_csv(p, opts)?);
    }
    let reference = parsed[0].sample_ids.clone();
    let mut sources = Vec::with_capacity(parsed.len());
    let mut feature_ids = Vec::with_capacity(parsed.len());
    let mut masks = Vec::with_capacity(parsed.len());
    for (s, src) in parsed.into_iter().enumerate() {
        let (values, missing) = if src.sample_ids == reference {
            (src.values, src.missing)
        } else if opts.reorder {
            let lookup: HashMap<&str, usize> = src
                .sample_ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.as_str(), i))
                .collect();
            let mut order = Vec::with_capacity(reference.len());
            for id in &reference {
                let &i = lookup.get(id.as_str()).ok_or_else(|| {
                    Error::invalid(format!(
                        "{}: sample `{id}` missing from source {s}",
                        paths[s].display()
                    ))
                })?;
                order.push(i);
            }
            let mut inverse = vec![0usize; order.len()];
            for (new_i, &old_i) in order.iter().enumerate() {
                inverse[old_i] = new_i;
            }
            let values = DMatrix::from_fn(src.values.nrows(), order.len(), |j, i| {
                src.values[(j, order[i])]
            });
            let missing = src
                .missing
                .iter()
                .map(|&(j, i)| (j, inverse[i]))
                .collect();
            (values, missing)
        } else {
            return Err(Error::invalid(format!(
                "{}: sample ids differ from the first source and no reorder key was requested",
                paths[s].display()
            )));
        };
        let mask = MissingMask::new(missing, values.nrows(), values.ncols())?;
        masks.push(mask);
        feature_ids.push(src.feature_ids);
        sources.push(values);
    }
    MultiOmicDataset::new(sources, reference, feature_ids, masks)
}

/// Loads an outcome CSV (`sample_id,value` with a header), matched to and
/// ordered by the dataset's sample ids. Missing values are empty cells or
/// `NA`.
pub fn load_outcome(
    path: &Path,
    kind: OutcomeKind,
    sample_ids: &[String],
    opts: &FormatOpts,
) -> Result<OutcomeSpec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut by_id: HashMap<String, Option<f64>> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::invalid(format!(
                "{}: outcome rows need exactly `sample_id,value`",
                path.display()
            )));
        }
        let id = record[0].to_string();
        let value = if is_missing_token(&record[1], opts) {
            None
        } else {
            Some(record[1].parse().map_err(|_| {
                Error::invalid(format!(
                    "{}: cannot parse outcome `{}` for sample `{id}`",
                    path.display(),
                    &record[1]
                ))
            })?)
        };
        if by_id.insert(id.clone(), value).is_some() {
            return Err(Error::DuplicateSampleId(id));
        }
    }
    let mut values = DVector::zeros(sample_ids.len());
    let mut missing = Vec::new();
    for (i, id) in sample_ids.iter().enumerate() {
        match by_id.get(id) {
            Some(Some(v)) => values[i] = *v,
            Some(None) => missing.push(i),
            None => {
                return Err(Error::invalid(format!(
                    "{}: no outcome row for sample `{id}`",
                    path.display()
                )))
            }
        }
    }
    OutcomeSpec::new(kind, values, missing)
}

/// Writes a source matrix as CSV in the dataset format, with `NA` at masked
/// positions.
pub fn write_source_csv(
    path: &Path,
    feature_ids: &[String],
    sample_ids: &[String],
    values: &DMatrix<f64>,
    mask: &MissingMask,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["feature_id".to_string()];
    header.extend(sample_ids.iter().cloned());
    w.write_record(&header)?;
    for j in 0..values.nrows() {
        let mut row = vec![feature_ids[j].clone()];
        for i in 0..values.ncols() {
            if mask.contains(j, i) {
                row.push("NA".to_string());
            } else {
                row.push(format!("{:.17e}", values[(j, i)]));
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a plain matrix as CSV with generated row/column labels.
pub fn write_matrix_csv(path: &Path, values: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["row".to_string()];
    header.extend((0..values.ncols()).map(|c| format!("c{c}")));
    w.write_record(&header)?;
    for j in 0..values.nrows() {
        let mut row = vec![j.to_string()];
        for i in 0..values.ncols() {
            row.push(format!("{:.17e}", values[(j, i)]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

// Chain persistence: one long-format CSV per parameter block plus a JSON
// meta file. Matrix blocks are (iter,row,col,value); vector blocks are
// (iter,index,value); scalars are (iter,value).

fn write_matrix_block(
    path: &Path,
    iter_matrices: impl Iterator<Item = DMatrix<f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "row", "col", "value"])?;
    for (t, m) in iter_matrices.enumerate() {
        for i in 0..m.ncols() {
            for j in 0..m.nrows() {
                w.write_record([
                    t.to_string(),
                    j.to_string(),
                    i.to_string(),
                    format!("{:.17e}", m[(j, i)]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_vector_block<'a>(
    path: &Path,
    iters: impl Iterator<Item = &'a DVector<f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "index", "value"])?;
    for (t, v) in iters.enumerate() {
        for k in 0..v.len() {
            w.write_record([t.to_string(), k.to_string(), format!("{:.17e}", v[k])])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_scalar_block(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "value"])?;
    for (t, v) in values.enumerate() {
        w.write_record([t.to_string(), format!("{v:.17e}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a chain dump: `meta.json`, the log-joint trace, and a long-format
/// CSV per parameter block (per source where applicable), including the
/// imputation records keyed by their data positions.
pub fn write_chain(dir: &Path, chain: &PosteriorSamples<f64>, data: &MultiOmicDataset<f64>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta_json = serde_json::to_string_pretty(&chain.meta)?;
    fs::write(dir.join("meta.json"), meta_json)?;
    write_scalar_block(
        &dir.join("log_joint.csv"),
        chain.log_joint.iter().copied(),
    )?;
    write_matrix_block(
        &dir.join("joint_scores.csv"),
        chain.states.iter().map(|st| st.joint_scores.clone()),
    )?;
    for s in 0..data.q() {
        write_matrix_block(
            &dir.join(format!("joint_loadings_{s}.csv")),
            chain.states.iter().map(move |st| st.joint_loadings[s].clone()),
        )?;
        write_matrix_block(
            &dir.join(format!("indiv_scores_{s}.csv")),
            chain.states.iter().map(move |st| st.indiv_scores[s].clone()),
        )?;
        write_matrix_block(
            &dir.join(format!("indiv_loadings_{s}.csv")),
            chain.states.iter().map(move |st| st.indiv_loadings[s].clone()),
        )?;
        if !data.mask(s).is_empty() {
            let mut w = csv::Writer::from_path(dir.join(format!("imputed_x_{s}.csv")))?;
            w.write_record(["iter", "row", "col", "value"])?;
            for (t, st) in chain.states.iter().enumerate() {
                for (k, &(j, i)) in data.mask(s).indices().iter().enumerate() {
                    w.write_record([
                        t.to_string(),
                        j.to_string(),
                        i.to_string(),
                        format!("{:.17e}", st.imputed_x[s][k]),
                    ])?;
                }
            }
            w.flush()?;
        }
    }
    if chain.states[0].coefficients.is_some() {
        write_vector_block(
            &dir.join("coefficients.csv"),
            chain
                .states
                .iter()
                .map(|st| st.coefficients.as_ref().expect("coefficients present")),
        )?;
    }
    if chain.states[0].noise_var.is_some() {
        write_scalar_block(
            &dir.join("noise_var.csv"),
            chain
                .states
                .iter()
                .map(|st| st.noise_var.expect("noise variance present")),
        )?;
    }
    if chain.states[0].latent.is_some() {
        write_vector_block(
            &dir.join("latent.csv"),
            chain
                .states
                .iter()
                .map(|st| st.latent.as_ref().expect("latent present")),
        )?;
    }
    if !chain.states[0].imputed_y.is_empty() {
        let mut w = csv::Writer::from_path(dir.join("imputed_y.csv"))?;
        w.write_record(["iter", "index", "value"])?;
        for (t, st) in chain.states.iter().enumerate() {
            for (k, v) in st.imputed_y.iter().enumerate() {
                w.write_record([t.to_string(), k.to_string(), format!("{v:.17e}")])?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

fn read_matrix_block(path: &Path, iters: usize, rows: usize, cols: usize) -> Result<Vec<DMatrix<f64>>> {
    let mut out = vec![DMatrix::zeros(rows, cols); iters];
    if !path.exists() {
        if rows == 0 || cols == 0 {
            return Ok(out);
        }
        return Err(Error::invalid(format!("missing chain block {}", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    for record in reader.records() {
        let record = record?;
        let t: usize = record[0].parse().map_err(|_| Error::invalid("bad iter"))?;
        let j: usize = record[1].parse().map_err(|_| Error::invalid("bad row"))?;
        let i: usize = record[2].parse().map_err(|_| Error::invalid("bad col"))?;
        let v: f64 = record[3].parse().map_err(|_| Error::invalid("bad value"))?;
        out[t][(j, i)] = v;
    }
    Ok(out)
}

fn read_vector_block(path: &Path, iters: usize, len: usize) -> Result<Vec<DVector<f64>>> {
    let mut out = vec![DVector::zeros(len); iters];
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    for record in reader.records() {
        let record = record?;
        let t: usize = record[0].parse().map_err(|_| Error::invalid("bad iter"))?;
        let k: usize = record[1].parse().map_err(|_| Error::invalid("bad index"))?;
        out[t][k] = record[2].parse().map_err(|_| Error::invalid("bad value"))?;
    }
    Ok(out)
}

fn read_scalar_block(path: &Path, iters: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; iters];
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    for record in reader.records() {
        let record = record?;
        let t: usize = record[0].parse().map_err(|_| Error::invalid("bad iter"))?;
        out[t] = record[1].parse().map_err(|_| Error::invalid("bad value"))?;
    }
    Ok(out)
}

/// Reads a chain dump back; `data` supplies the mask layout the imputation
/// records are keyed by.
pub fn read_chain(dir: &Path, data: &MultiOmicDataset<f64>) -> Result<PosteriorSamples<f64>> {
    let meta: ChainMeta<f64> = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    let iters = meta.iterations;
    let n = meta.n;
    let q = meta.dims.len();
    let r = meta.ranks.joint;

    let joint_scores = read_matrix_block(&dir.join("joint_scores.csv"), iters, n, r)?;
    let mut joint_loadings: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(q);
    let mut indiv_scores: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(q);
    let mut indiv_loadings: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(q);
    for s in 0..q {
        joint_loadings.push(read_matrix_block(
            &dir.join(format!("joint_loadings_{s}.csv")),
            iters,
            meta.dims[s],
            r,
        )?);
        indiv_scores.push(read_matrix_block(
            &dir.join(format!("indiv_scores_{s}.csv")),
            iters,
            n,
            meta.ranks.indiv[s],
        )?);
        indiv_loadings.push(read_matrix_block(
            &dir.join(format!("indiv_loadings_{s}.csv")),
            iters,
            meta.dims[s],
            meta.ranks.indiv[s],
        )?);
    }
    let coefficients = if dir.join("coefficients.csv").exists() {
        Some(read_vector_block(
            &dir.join("coefficients.csv"),
            iters,
            meta.ranks.coefficient_len(),
        )?)
    } else {
        None
    };
    let noise_var = if dir.join("noise_var.csv").exists() {
        Some(read_scalar_block(&dir.join("noise_var.csv"), iters)?)
    } else {
        None
    };
    let latent = if dir.join("latent.csv").exists() {
        Some(read_vector_block(&dir.join("latent.csv"), iters, n)?)
    } else {
        None
    };
    let mut imputed_x: Vec<Option<Vec<DMatrix<f64>>>> = Vec::with_capacity(q);
    for s in 0..q {
        let path = dir.join(format!("imputed_x_{s}.csv"));
        if path.exists() {
            imputed_x.push(Some(read_matrix_block(&path, iters, meta.dims[s], n)?));
        } else {
            imputed_x.push(None);
        }
    }
    let imputed_y: Option<Vec<DVector<f64>>> = if dir.join("imputed_y.csv").exists() {
        // Stored by missing-list position, not sample index.
        let count = {
            let mut max_k = 0usize;
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .from_path(dir.join("imputed_y.csv"))?;
            for record in reader.records() {
                let record = record?;
                let k: usize = record[1].parse().map_err(|_| Error::invalid("bad index"))?;
                max_k = max_k.max(k + 1);
            }
            max_k
        };
        Some(read_vector_block(&dir.join("imputed_y.csv"), iters, count)?)
    } else {
        None
    };

    let log_joint = read_scalar_block(&dir.join("log_joint.csv"), iters)?;

    let mut states = Vec::with_capacity(iters);
    for t in 0..iters {
        let imputed_x_t: Vec<Vec<f64>> = (0..q)
            .map(|s| match &imputed_x[s] {
                Some(blocks) => data
                    .mask(s)
                    .indices()
                    .iter()
                    .map(|&(j, i)| blocks[t][(j, i)])
                    .collect(),
                None => Vec::new(),
            })
            .collect();
        states.push(DecompositionState {
            joint_scores: joint_scores[t].clone(),
            joint_loadings: (0..q).map(|s| joint_loadings[s][t].clone()).collect(),
            indiv_scores: (0..q).map(|s| indiv_scores[s][t].clone()).collect(),
            indiv_loadings: (0..q).map(|s| indiv_loadings[s][t].clone()).collect(),
            coefficients: coefficients.as_ref().map(|c| c[t].clone()),
            noise_var: noise_var.as_ref().map(|v| v[t]),
            latent: latent.as_ref().map(|z| z[t].clone()),
            imputed_x: imputed_x_t,
            imputed_y: imputed_y
                .as_ref()
                .map(|v| v[t].iter().copied().collect())
                .unwrap_or_default(),
        });
    }
    Ok(PosteriorSamples {
        states,
        log_joint,
        meta,
    })
}

/// Serializable scaling metadata stored alongside processed data.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ScalingFile {
    pub row_means: Vec<Vec<f64>>,
    pub noise_sd: Vec<f64>,
    pub centered: bool,
    pub scaled: bool,
}

impl ScalingFile {
    pub fn from_meta(meta: &ScalingMeta<f64>) -> Self {
        Self {
            row_means: meta
                .row_means
                .iter()
                .map(|v| v.iter().copied().collect())
                .collect(),
            noise_sd: meta.noise_sd.clone(),
            centered: meta.centered,
            scaled: meta.scaled,
        }
    }
}

/// Writes the processed (centered/scaled) dataset plus scaling metadata, so
/// later pipeline stages can reload exactly what the sampler saw.
pub fn write_processed(dir: &Path, data: &MultiOmicDataset<f64>) -> Result<()> {
    fs::create_dir_all(dir)?;
    for s in 0..data.q() {
        write_source_csv(
            &dir.join(format!("source_{s}.csv")),
            data.feature_ids(s),
            data.sample_ids(),
            data.source(s),
            data.mask(s),
        )?;
    }
    let scaling = ScalingFile::from_meta(data.scaling());
    fs::write(
        dir.join("scaling.json"),
        serde_json::to_string_pretty(&scaling)?,
    )?;
    Ok(())
}

/// Reads a processed dataset back (sources plus scaling metadata).
pub fn read_processed(dir: &Path) -> Result<MultiOmicDataset<f64>> {
    let mut paths = Vec::new();
    let mut s = 0;
    loop {
        let p = dir.join(format!("source_{s}.csv"));
        if !p.exists() {
            break;
        }
        paths.push(p);
        s += 1;
    }
    if paths.is_empty() {
        return Err(Error::invalid(format!(
            "no processed sources under {}",
            dir.display()
        )));
    }
    let mut data = load_dataset(&paths, &FormatOpts::default())?;
    let scaling_path = dir.join("scaling.json");
    if scaling_path.exists() {
        let f: ScalingFile = serde_json::from_str(&fs::read_to_string(scaling_path)?)?;
        data = data.with_scaling(ScalingMeta {
            row_means: f.row_means.iter().map(|v| DVector::from_vec(v.clone())).collect(),
            noise_sd: f.noise_sd,
            centered: f.centered,
            scaled: f.scaled,
        })?;
    }
    Ok(data)
}

/// Writes an outcome CSV (`sample_id,value`, `NA` at missing positions).
pub fn write_outcome_csv(
    path: &Path,
    sample_ids: &[String],
    outcome: &OutcomeSpec<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "value"])?;
    for (i, id) in sample_ids.iter().enumerate() {
        if outcome.is_missing(i) {
            w.write_record([id.as_str(), "NA"])?;
        } else {
            w.write_record([id.as_str(), &format!("{:.17e}", outcome.values()[i])])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a study report as JSON plus aggregate and per-replication CSV
/// tables.
pub fn write_study_report(dir: &Path, report: &StudyReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    let mut w = csv::Writer::from_path(dir.join("aggregate.csv"))?;
    w.write_record(["target", "rse", "coverage", "ci_width"])?;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for (target, m) in &report.aggregate {
        w.write_record([
            target.clone(),
            fmt(m.rse),
            fmt(m.coverage),
            fmt(m.ci_width),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("replications.csv"))?;
    w.write_record(["replication", "target", "rse", "coverage", "ci_width"])?;
    for (rep, table) in report.per_replication.iter().enumerate() {
        for (target, m) in table {
            w.write_record([
                rep.to_string(),
                target.clone(),
                fmt(m.rse),
                fmt(m.coverage),
                fmt(m.ci_width),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
