//! Regenerates the bundled demo datasets under `data/`.
//!
//! Usage: `cargo run -p multifac-core --example make_demo_data [-- <out-dir>]`
//!
//! `demo-small` is a two-source toy with a few missing cells and two
//! missing outcomes, sized for smoke tests. `demo-wide` matches the shape
//! ratios of a realistic two-omics study (120- and 400-feature sources on
//! 52 samples) with a continuous outcome.

use std::fs;
use std::path::Path;

use multifac_core::data::OutcomeKind;
use multifac_core::io::{write_outcome_csv, write_source_csv};
use multifac_core::sim::{
    generate_factorization_data, inject_missingness, MissingSpec, StudyConfig, StudyKind,
};

fn write_preset_configs(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    for name in multifac_core::sim::PRESET_NAMES {
        let cfg = multifac_core::sim::preset(name).unwrap();
        fs::write(
            dir.join(format!("{name}.json")),
            serde_json::to_string_pretty(&cfg).unwrap(),
        )
        .unwrap();
    }
    println!("wrote {} preset configs to {}", multifac_core::sim::PRESET_NAMES.len(), dir.display());
}

fn base_config() -> StudyConfig {
    StudyConfig {
        kind: StudyKind::Comparison,
        dims: vec![],
        n: 0,
        joint_rank: 0,
        indiv_ranks: vec![],
        s2n_x: None,
        s2n_y: None,
        missing: MissingSpec::None,
        outcome: Some(OutcomeKind::Continuous),
        outcome_missing_fraction: None,
        replications: 1,
        iterations: 10,
        burn_in: 5,
        seed: 0,
        solver_tol: 1e-8,
        solver_max_iter: 5000,
    }
}

fn write_set(
    dir: &Path,
    cfg: &StudyConfig,
    seed: u64,
    data_missing: Option<MissingSpec>,
    outcome_missing: &[usize],
) {
    fs::create_dir_all(dir).unwrap();
    let g = generate_factorization_data(cfg, seed).unwrap();
    let data = match data_missing {
        Some(spec) => inject_missingness(&g.dataset, &spec, seed ^ 0xABCD).unwrap().0,
        None => g.dataset.clone(),
    };
    for s in 0..data.q() {
        write_source_csv(
            &dir.join(format!("source_{}.csv", s + 1)),
            data.feature_ids(s),
            data.sample_ids(),
            data.source(s),
            data.mask(s),
        )
        .unwrap();
    }
    let outcome = g
        .outcome
        .unwrap()
        .with_missing(outcome_missing.to_vec())
        .unwrap();
    write_outcome_csv(&dir.join("outcome.csv"), data.sample_ids(), &outcome).unwrap();
    println!("wrote {}", dir.display());
}

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "data".to_string());
    let out = Path::new(&out);
    write_preset_configs(Path::new("configs"));

    let mut small = base_config();
    small.dims = vec![12, 18];
    small.n = 10;
    small.joint_rank = 1;
    small.indiv_ranks = vec![1, 1];
    small.s2n_x = Some(4.0);
    small.s2n_y = Some(2.0);
    write_set(
        &out.join("demo-small"),
        &small,
        20_240_810,
        Some(MissingSpec::Entrywise { fraction: 0.05 }),
        &[2, 7],
    );

    // A JSON dataset manifest pointing at the small set.
    let manifest = serde_json::json!({
        "sources": ["source_1.csv", "source_2.csv"],
        "outcome": "outcome.csv",
        "outcome_kind": "continuous",
        "seed": 7
    });
    fs::write(
        out.join("demo-small/dataset.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .unwrap();

    let mut wide = base_config();
    wide.dims = vec![120, 400];
    wide.n = 52;
    wide.joint_rank = 3;
    wide.indiv_ranks = vec![2, 3];
    wide.s2n_x = Some(2.0);
    wide.s2n_y = Some(1.0);
    write_set(&out.join("demo-wide"), &wide, 20_240_811, None, &[]);
}
