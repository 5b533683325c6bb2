//! Command-line front end: decompose, fit, align, summarize, predict, and
//! simulate. Artifacts go to `--out`; logs go to stderr. Exit codes: 0 on
//! success, 2 on input validation failures, 3 on numerical failures.

mod manifest;
mod summaries;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use multifac_core::align::align_chain;
use multifac_core::data::{MultiOmicDataset, OutcomeKind, OutcomeSpec};
use multifac_core::gibbs::{run_sampler, PriorSpec, SamplerConfig};
use multifac_core::io as mio;
use multifac_core::sim::{preset, run_study_with_threads, StudyConfig, PRESET_NAMES};
use multifac_core::solver::{decompose, PenaltySpec, SolverOptions};

use manifest::ManifestBuilder;
use summaries::parse_outcome_kind;

#[derive(Parser)]
#[command(
    name = "multifac",
    version,
    about = "Bayesian multi-source matrix factorization with outcome prediction and imputation"
)]
struct Cli {
    /// Worker threads for parallel replications (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find the convex posterior mode and the selected ranks.
    Decompose(DecomposeArgs),
    /// Full pipeline: preprocess, decompose, sample, align, summarize.
    Fit(FitArgs),
    /// Align a previously written chain and emit the audit trail.
    Align(AlignArgs),
    /// Summarize a previously written chain (re-aligned on the fly).
    Summarize(SummarizeArgs),
    /// Fit with masked outcomes and emit predictions for them.
    Predict(FitArgs),
    /// Run a simulation study from a preset or a JSON config.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Source CSV paths (comma-separated or repeated).
    #[arg(long, value_delimiter = ',', conflicts_with = "data_manifest")]
    data: Vec<PathBuf>,
    /// JSON dataset manifest: {"sources": [..], "outcome": .., "outcome_kind": .., "seed": ..},
    /// with paths resolved relative to the manifest file.
    #[arg(long)]
    data_manifest: Option<PathBuf>,
    /// Outcome CSV (`sample_id,value`); requires --outcome-type.
    #[arg(long, requires = "outcome_type")]
    outcome: Option<PathBuf>,
    /// Outcome model: continuous or binary.
    #[arg(long, value_parser = parse_outcome_kind)]
    outcome_type: Option<OutcomeKind>,
    /// Reorder later sources' samples to the first source's order by id.
    #[arg(long)]
    reorder_samples: bool,
}

/// JSON dataset manifest consumed by fit/predict/decompose.
#[derive(serde::Deserialize)]
struct DatasetManifest {
    sources: Vec<PathBuf>,
    #[serde(default)]
    outcome: Option<PathBuf>,
    #[serde(default)]
    outcome_kind: Option<OutcomeKind>,
    #[serde(default)]
    seed: Option<u64>,
}

/// Resolved input files: sources, optional outcome, optional manifest seed.
struct ResolvedInputs {
    sources: Vec<PathBuf>,
    outcome: Option<(PathBuf, OutcomeKind)>,
    seed: Option<u64>,
}

fn resolve_inputs(args: &DataArgs, manifest: &mut ManifestBuilder) -> Result<ResolvedInputs> {
    match &args.data_manifest {
        Some(path) => {
            manifest.input(path)?;
            let parsed: DatasetManifest = serde_json::from_str(&fs::read_to_string(path)?)
                .map_err(|e| {
                    multifac_core::Error::InvalidInput(format!(
                        "bad dataset manifest {}: {e}",
                        path.display()
                    ))
                })?;
            let base = path.parent().unwrap_or(Path::new("."));
            let sources = parsed.sources.iter().map(|p| base.join(p)).collect();
            let outcome = match (parsed.outcome, parsed.outcome_kind) {
                (Some(p), Some(kind)) => Some((base.join(p), kind)),
                (None, _) => None,
                (Some(_), None) => {
                    anyhow::bail!(multifac_core::Error::InvalidInput(
                        "dataset manifest declares an outcome without an outcome_kind".to_string()
                    ))
                }
            };
            Ok(ResolvedInputs {
                sources,
                outcome,
                seed: parsed.seed,
            })
        }
        None => {
            if args.data.is_empty() {
                anyhow::bail!(multifac_core::Error::InvalidInput(
                    "either --data or --data-manifest is required".to_string()
                ));
            }
            Ok(ResolvedInputs {
                sources: args.data.clone(),
                outcome: match (&args.outcome, args.outcome_type) {
                    (Some(p), Some(kind)) => Some((p.clone(), kind)),
                    _ => None,
                },
                seed: None,
            })
        }
    }
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Relative objective-decrease tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Sweep cap.
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Posterior sampling iterations (default 2000, or 10000 with missing
    /// data).
    #[arg(long)]
    iters: Option<usize>,
    /// Burn-in iterations (default half of --iters).
    #[arg(long)]
    burnin: Option<usize>,
    /// Chain seed (default: the dataset manifest's seed, else 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Solver tolerance for the mode initialization.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Solver sweep cap.
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    /// Clusters for the co-clustering summary.
    #[arg(long, default_value_t = 2)]
    cluster_k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AlignArgs {
    /// A fit output directory (containing chain/ and processed/).
    #[arg(long)]
    run: PathBuf,
    /// Output directory (default: <run>/aligned).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// A fit output directory (containing chain/ and processed/).
    #[arg(long)]
    run: PathBuf,
    /// Output directory (default: <run>/summary).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    cluster_k: usize,
    /// Seed for the k-means restarts and predictive draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Named preset; see --list-presets.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// JSON study configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the available preset names and exit.
    #[arg(long)]
    list_presets: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        // A global pool can only be installed once; a failed second install
        // just keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let result = match &cli.command {
        Command::Decompose(args) => cmd_decompose(args),
        Command::Fit(args) => cmd_fit(args, false),
        Command::Predict(args) => cmd_fit(args, true),
        Command::Align(args) => cmd_align(args),
        Command::Summarize(args) => cmd_summarize(args),
        Command::Simulate(args) => cmd_simulate(args, cli.threads),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<multifac_core::Error>() {
        Some(e) if !e.is_invalid_input() => 3,
        _ => 2,
    }
}

struct LoadedData {
    data: MultiOmicDataset<f64>,
    outcome: Option<OutcomeSpec<f64>>,
    manifest_seed: Option<u64>,
}

fn load_inputs(args: &DataArgs, manifest: &mut ManifestBuilder) -> Result<LoadedData> {
    let opts = mio::FormatOpts {
        reorder: args.reorder_samples,
        ..Default::default()
    };
    let resolved = resolve_inputs(args, manifest)?;
    for p in &resolved.sources {
        manifest
            .input(p)
            .with_context(|| format!("reading {}", p.display()))?;
    }
    let data = mio::load_dataset(&resolved.sources, &opts)?;
    let outcome = match &resolved.outcome {
        Some((path, kind)) => {
            manifest.input(path)?;
            Some(mio::load_outcome(path, *kind, data.sample_ids(), &opts)?)
        }
        None => None,
    };
    Ok(LoadedData {
        data,
        outcome,
        manifest_seed: resolved.seed,
    })
}

fn cmd_decompose(args: &DecomposeArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("decompose");
    let loaded = load_inputs(&args.data, &mut manifest)?;
    fs::create_dir_all(&args.out)?;

    let processed = loaded.data.center_rows()?.scale_to_unit_error()?;
    let pen = PenaltySpec::defaults(processed.n(), &processed.dims());
    let mode = decompose(
        &processed,
        &pen,
        &SolverOptions {
            tol: args.tol,
            max_iter: args.max_iter,
            init: None,
        },
    )?;

    mio::write_processed(&args.out.join("processed"), &processed)?;
    let report = serde_json::json!({
        "ranks": mode.ranks,
        "sweeps": mode.sweeps,
        "objective_trace": mode.objective_trace,
        "penalties": { "joint": pen.joint, "indiv": pen.indiv },
        "noise_sd": processed.scaling().noise_sd,
    });
    fs::write(
        args.out.join("decomposition.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    mio::write_matrix_csv(&args.out.join("joint_scores.csv"), &mode.joint_scores)?;
    for s in 0..processed.q() {
        mio::write_matrix_csv(
            &args.out.join(format!("joint_loadings_{s}.csv")),
            &mode.joint_loadings[s],
        )?;
        mio::write_matrix_csv(
            &args.out.join(format!("indiv_scores_{s}.csv")),
            &mode.indiv_scores[s],
        )?;
        mio::write_matrix_csv(
            &args.out.join(format!("indiv_loadings_{s}.csv")),
            &mode.indiv_loadings[s],
        )?;
    }
    manifest.config(serde_json::json!({"tol": args.tol, "max_iter": args.max_iter}));
    manifest.output(&args.out.join("decomposition.json"));
    manifest.write(&args.out)?;
    println!(
        "ranks: joint {} indiv {:?} after {} sweeps",
        mode.ranks.joint, mode.ranks.indiv, mode.sweeps
    );
    Ok(())
}

fn cmd_fit(args: &FitArgs, predict_only: bool) -> Result<()> {
    let command = if predict_only { "predict" } else { "fit" };
    let mut manifest = ManifestBuilder::new(command);
    let loaded = load_inputs(&args.data, &mut manifest)?;
    let seed = args.seed.or(loaded.manifest_seed).unwrap_or(0);
    manifest.seed(seed);
    if predict_only && loaded.outcome.is_none() {
        anyhow::bail!(multifac_core::Error::InvalidInput(
            "predict requires --outcome and --outcome-type".to_string()
        ));
    }
    fs::create_dir_all(&args.out)?;

    let processed = loaded.data.center_rows()?.scale_to_unit_error()?;
    let missing_present = processed.any_missing()
        || loaded.outcome.as_ref().is_some_and(|o| o.n_missing() > 0);
    let iterations = args
        .iters
        .unwrap_or(if missing_present { 10_000 } else { 2_000 });
    let burn_in = args.burnin.unwrap_or(iterations / 2);

    let pen = PenaltySpec::defaults(processed.n(), &processed.dims());
    let mode = decompose(
        &processed,
        &pen,
        &SolverOptions {
            tol: args.tol,
            max_iter: args.max_iter,
            init: None,
        },
    )?;
    log::info!(
        "mode found: joint rank {}, individual ranks {:?}",
        mode.ranks.joint,
        mode.ranks.indiv
    );

    let priors = PriorSpec::from_penalties(&pen);
    let scfg = SamplerConfig {
        iterations,
        burn_in,
        seed,
    };
    let chain = run_sampler(&processed, loaded.outcome.as_ref(), &mode, &priors, &scfg)?;

    mio::write_processed(&args.out.join("processed"), &processed)?;
    if let Some(o) = &loaded.outcome {
        mio::write_outcome_csv(
            &args.out.join("processed").join("outcome.csv"),
            processed.sample_ids(),
            o,
        )?;
        fs::write(
            args.out.join("processed").join("outcome_kind.json"),
            serde_json::to_string(&o.kind)?,
        )?;
    }
    mio::write_chain(&args.out.join("chain"), &chain, &processed)?;

    let aligned = align_chain(&chain)?;
    let aligned_dir = args.out.join("aligned");
    write_aligned(&aligned_dir, &aligned, &processed)?;

    let summary_dir = args.out.join("summary");
    summaries::write_all(
        &summary_dir,
        &aligned,
        &chain,
        &processed,
        loaded.outcome.as_ref(),
        args.cluster_k,
        seed,
    )?;

    if predict_only {
        write_prediction_csv(
            &args.out.join("predictions.csv"),
            &aligned,
            &processed,
            loaded.outcome.as_ref().expect("outcome present"),
            seed,
        )?;
    }

    manifest.config(serde_json::json!({
        "iterations": iterations,
        "burn_in": burn_in,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "cluster_k": args.cluster_k,
        "ranks": chain.meta.ranks,
    }));
    manifest.output(&args.out.join("chain"));
    manifest.output(&summary_dir);
    manifest.write(&args.out)?;
    println!(
        "{command} complete: {} iterations ({} burn-in), joint rank {}",
        iterations, burn_in, chain.meta.ranks.joint
    );
    Ok(())
}

/// Predictions for the masked outcome samples only; a fully observed
/// outcome produces a header-only file and a warning.
fn write_prediction_csv(
    path: &Path,
    aligned: &multifac_core::align::AlignedSamples<f64>,
    data: &MultiOmicDataset<f64>,
    outcome: &OutcomeSpec<f64>,
    seed: u64,
) -> Result<()> {
    use rand::SeedableRng;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "sample_id",
        "mean",
        "sd",
        "lower",
        "upper",
        "pred_lower",
        "pred_upper",
    ])?;
    if outcome.n_missing() == 0 {
        log::warn!("outcome is fully observed; nothing to predict");
        w.flush()?;
        return Ok(());
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let preds = multifac_core::summary::posterior_predict_y(
        aligned,
        outcome.kind,
        outcome.missing(),
        0.95,
        &mut rng,
    )?;
    for p in &preds {
        w.write_record([
            data.sample_ids()[p.index].as_str(),
            &format!("{:.6e}", p.conditional_mean.mean),
            &format!("{:.6e}", p.conditional_mean.sd),
            &format!("{:.6e}", p.conditional_mean.lower),
            &format!("{:.6e}", p.conditional_mean.upper),
            &format!("{:.6e}", p.predictive.lower),
            &format!("{:.6e}", p.predictive.upper),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_aligned(
    dir: &Path,
    aligned: &multifac_core::align::AlignedSamples<f64>,
    data: &MultiOmicDataset<f64>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    // Long-format CSVs matching the chain-dump layout, over retained
    // iterations.
    let write_block = |name: &str, get: &dyn Fn(usize) -> nalgebra::DMatrix<f64>| -> Result<()> {
        let mut w = csv::Writer::from_path(dir.join(name))?;
        w.write_record(["iter", "row", "col", "value"])?;
        for t in 0..aligned.len() {
            let m = get(t);
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
    };
    write_block("joint_scores.csv", &|t| aligned.joint_scores[t].clone())?;
    for s in 0..data.q() {
        write_block(&format!("joint_loadings_{s}.csv"), &|t| {
            aligned.joint_loadings[t][s].clone()
        })?;
        write_block(&format!("indiv_scores_{s}.csv"), &|t| {
            aligned.indiv_scores[t][s].clone()
        })?;
        write_block(&format!("indiv_loadings_{s}.csv"), &|t| {
            aligned.indiv_loadings[t][s].clone()
        })?;
    }
    if aligned.coefficients[0].is_some() {
        let mut w = csv::Writer::from_path(dir.join("coefficients.csv"))?;
        w.write_record(["iter", "index", "value"])?;
        for t in 0..aligned.len() {
            let beta = aligned.coefficients[t].as_ref().unwrap();
            for k in 0..beta.len() {
                w.write_record([t.to_string(), k.to_string(), format!("{:.17e}", beta[k])])?;
            }
        }
        w.flush()?;
    }
    let audit = serde_json::json!({
        "pivot_index": aligned.pivot_index,
        "joint_permutations": aligned.joint_permutations,
        "joint_signs": aligned.joint_signs,
        "indiv_permutations": aligned.indiv_permutations,
        "indiv_signs": aligned.indiv_signs,
    });
    fs::write(
        dir.join("alignment_audit.json"),
        serde_json::to_string_pretty(&audit)?,
    )?;
    Ok(())
}

/// Loads a fit output directory back: processed data, optional outcome,
/// and the chain.
fn load_run(
    run: &Path,
) -> Result<(
    MultiOmicDataset<f64>,
    Option<OutcomeSpec<f64>>,
    multifac_core::Chain,
)> {
    let processed = mio::read_processed(&run.join("processed"))?;
    let outcome_path = run.join("processed").join("outcome.csv");
    let outcome = if outcome_path.exists() {
        let kind: OutcomeKind = serde_json::from_str(&fs::read_to_string(
            run.join("processed").join("outcome_kind.json"),
        )?)?;
        Some(mio::load_outcome(
            &outcome_path,
            kind,
            processed.sample_ids(),
            &mio::FormatOpts::default(),
        )?)
    } else {
        None
    };
    let chain = mio::read_chain(&run.join("chain"), &processed)?;
    Ok((processed, outcome, chain))
}

fn cmd_align(args: &AlignArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("align");
    let (processed, _outcome, chain) = load_run(&args.run)?;
    let out = args.out.clone().unwrap_or_else(|| args.run.join("aligned"));
    fs::create_dir_all(&out)?;
    let aligned = align_chain(&chain)?;
    write_aligned(&out, &aligned, &processed)?;
    manifest.config(serde_json::json!({
        "run": args.run,
        "pivot_index": aligned.pivot_index,
    }));
    manifest.output(&out);
    manifest.write(&out)?;
    println!(
        "aligned {} retained iterations (pivot {})",
        aligned.len(),
        aligned.pivot_index
    );
    Ok(())
}

fn cmd_summarize(args: &SummarizeArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("summarize");
    let (processed, outcome, chain) = load_run(&args.run)?;
    let out = args.out.clone().unwrap_or_else(|| args.run.join("summary"));
    let aligned = align_chain(&chain)?;
    summaries::write_all(
        &out,
        &aligned,
        &chain,
        &processed,
        outcome.as_ref(),
        args.cluster_k,
        args.seed,
    )?;
    // Log-joint trace for convergence inspection.
    let mut w = csv::Writer::from_path(out.join("log_joint.csv"))?;
    w.write_record(["iter", "value"])?;
    for (t, v) in chain.log_joint.iter().enumerate() {
        w.write_record([t.to_string(), format!("{v:.10e}")])?;
    }
    w.flush()?;
    manifest.config(serde_json::json!({"run": args.run, "cluster_k": args.cluster_k}));
    manifest.output(&out);
    manifest.write(&out)?;
    println!("summaries written to {}", out.display());
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs, threads: usize) -> Result<()> {
    if args.list_presets {
        for name in PRESET_NAMES {
            println!("{name}");
        }
        return Ok(());
    }
    let mut manifest = ManifestBuilder::new("simulate");
    let config: StudyConfig = match (&args.preset, &args.config) {
        (Some(name), None) => preset(name).ok_or_else(|| {
            multifac_core::Error::InvalidInput(format!(
                "unknown preset `{name}`; try --list-presets"
            ))
        })?,
        (None, Some(path)) => {
            manifest.input(path)?;
            serde_json::from_str(&fs::read_to_string(path)?)
                .map_err(|e| multifac_core::Error::InvalidInput(format!("bad study config: {e}")))?
        }
        _ => anyhow::bail!(multifac_core::Error::InvalidInput(
            "exactly one of --preset or --config is required".to_string()
        )),
    };
    config.validate()?;
    manifest.seed(config.seed);
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("study-output"));
    fs::create_dir_all(&out)?;
    let report = run_study_with_threads(&config, threads)?;
    mio::write_study_report(&out, &report)?;
    manifest.config(serde_json::to_value(&config)?);
    manifest.output(&out.join("report.json"));
    manifest.write(&out)?;
    println!("study complete in {:.1}s; aggregate:", report.runtime_secs);
    for (target, m) in &report.aggregate {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "  {target:24} rse {:>8}  coverage {:>8}  width {:>8}",
            fmt(m.rse),
            fmt(m.coverage),
            fmt(m.ci_width)
        );
    }
    Ok(())
}
