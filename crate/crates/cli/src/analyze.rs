//! The `analyze` pipeline: resolve the input measure, pick centers, profile
//! every requested coefficient down the dyadic ladder, and write the report
//! bundle.
//!
//! Per-center work runs on a worker pool; results are merged back in
//! (center, coefficient) order and written from the main thread, so the
//! bundle comes out byte-identical across reruns and thread counts.
//! One center failing records a row in the summary instead of sinking the
//! batch.

use std::fs;
use std::path::{Path, PathBuf};

use flatscan_core::coeffs::{square_function, CoefficientKind, CoefficientProfile};
use flatscan_core::measure::DiscreteMeasure;
use flatscan_core::zoo::generate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{AnalysisConfig, CenterSpec, InputSource};
use crate::{forest, load_measure, CliError};

/// Run the whole batch and return the directory the bundle landed in.
pub fn run_analysis(
    cfg: &AnalysisConfig,
    out_override: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let kinds = cfg.validate()?;
    let out_dir = out_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| CliError::Config {
            reason: "no output directory: set out_dir in the config or pass --out".into(),
        })?;
    let mu = match &cfg.input {
        InputSource::Path { path } => load_measure(path)?,
        InputSource::Spec { spec } => generate(spec).map_err(CliError::Core)?.measure,
    };
    let centers = resolve_centers(&cfg.centers, &mu)?;
    let profile_cfg = cfg.profile_config()?;

    // One job per (center, kind); rayon's indexed collect keeps the output
    // order equal to the job order regardless of scheduling.
    let jobs: Vec<(usize, usize)> = (0..centers.len())
        .flat_map(|ci| (0..kinds.len()).map(move |ki| (ci, ki)))
        .collect();
    let results: Vec<Result<CoefficientProfile, String>> = jobs
        .par_iter()
        .map(|&(ci, ki)| {
            square_function(
                &mu,
                &centers[ci],
                cfg.scales.r0,
                cfg.scales.depth,
                kinds[ki],
                &profile_cfg,
            )
            .map_err(|e| e.to_string())
        })
        .collect();

    fs::create_dir_all(&out_dir).map_err(|e| CliError::Io {
        path: out_dir.clone(),
        source: e,
    })?;

    let mut failures: Vec<Value> = Vec::new();
    let mut per_kind: Vec<Vec<&CoefficientProfile>> = vec![Vec::new(); kinds.len()];
    for (&(ci, ki), result) in jobs.iter().zip(&results) {
        let label = kinds[ki].label();
        match result {
            Ok(profile) => {
                let stem = format!("center_{ci:03}_{label}");
                write_text(&out_dir.join(format!("{stem}.csv")), &profile.to_csv_string())?;
                write_json(&out_dir.join(format!("{stem}.json")), &profile.to_json_value())?;
                per_kind[ki].push(profile);
            }
            Err(message) => failures.push(json!({
                "center_index": ci,
                "kind": label,
                "error": message,
            })),
        }
    }

    // Gnuplot-style plot data: one file per kind, one indexed block per
    // center, failed centers simply absent.
    for (ki, kind) in kinds.iter().enumerate() {
        let mut blocks = String::new();
        for profile in &per_kind[ki] {
            blocks.push_str(&format!("# center {:?}\n", profile.center));
            for row in &profile.rows {
                if let Some(v) = row.value {
                    blocks.push_str(&format!("{} {} {}\n", row.scale, v, row.square_sum_partial));
                }
            }
            blocks.push('\n');
        }
        write_text(&out_dir.join(format!("plot_{}.dat", kind.label())), &blocks)?;
    }

    let kind_stats: Vec<Value> = kinds
        .iter()
        .enumerate()
        .map(|(ki, kind)| summarize_kind(*kind, &per_kind[ki], cfg.scales.depth))
        .collect();

    let mut summary = json!({
        "input": input_echo(&cfg.input),
        "scales": { "r0": cfg.scales.r0, "depth": cfg.scales.depth },
        "plane_dim": cfg.plane_dim,
        "centers": centers,
        "kinds": kind_stats,
        "failures": failures,
    });

    if let Some(tree) = &cfg.tree {
        let spec = match &cfg.input {
            InputSource::Spec { spec } => spec,
            InputSource::Path { .. } => unreachable!("validated"),
        };
        let report = forest::run_forest(spec, tree)?;
        write_json(&out_dir.join("tree.json"), &report)?;
        summary["tree"] = json!({ "file": "tree.json" });
    }

    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(out_dir)
}

fn resolve_centers(
    spec: &CenterSpec,
    mu: &DiscreteMeasure,
) -> Result<Vec<Vec<f64>>, CliError> {
    match spec {
        CenterSpec::List { list } => {
            for (i, c) in list.iter().enumerate() {
                if c.len() != mu.dim() {
                    return Err(CliError::Config {
                        reason: format!(
                            "center {i} has {} coordinates, the measure is {}-dimensional",
                            c.len(),
                            mu.dim()
                        ),
                    });
                }
                if !c.iter().all(|x| x.is_finite()) {
                    return Err(CliError::Config {
                        reason: format!("center {i} has a non-finite coordinate"),
                    });
                }
            }
            Ok(list.clone())
        }
        CenterSpec::Subsample { subsample } => {
            let count = subsample.count.min(mu.len());
            let mut rng = ChaCha8Rng::seed_from_u64(subsample.seed);
            let mut picked = rand::seq::index::sample(&mut rng, mu.len(), count).into_vec();
            // Atom order, not draw order, so the report reads left to right.
            picked.sort_unstable();
            Ok(picked.into_iter().map(|i| mu.position(i).to_vec()).collect())
        }
    }
}

/// Square-sum statistics for one kind across its successful centers: the
/// spread of the final sums, the per-level mean of the partial sums, and
/// the least-squares growth rate of that mean per dyadic level.  A flat
/// input keeps the slope near zero; a measure paying a fixed flatness cost
/// at every scale grows linearly in the level index.
fn summarize_kind(kind: CoefficientKind, profiles: &[&CoefficientProfile], depth: usize) -> Value {
    let mut sums: Vec<f64> = profiles.iter().map(|p| p.square_sum()).collect();
    sums.sort_unstable_by(|a, b| a.partial_cmp(b).expect("square sums are finite"));
    let undefined: usize = profiles
        .iter()
        .map(|p| p.rows.iter().filter(|r| r.value.is_none()).count())
        .sum();
    let per_level_mean: Vec<f64> = if profiles.is_empty() {
        Vec::new()
    } else {
        (0..depth)
            .map(|j| {
                let total: f64 = profiles.iter().map(|p| p.rows[j].square_sum_partial).sum();
                total / profiles.len() as f64
            })
            .collect()
    };
    json!({
        "kind": kind.label(),
        "profiles": profiles.len(),
        "undefined_rows": undefined,
        "median_square_sum": median_of_sorted(&sums),
        "max_square_sum": sums.last().copied(),
        "per_level_mean_square_sum": per_level_mean,
        "level_slope": ols_slope(&per_level_mean),
    })
}

fn median_of_sorted(sorted: &[f64]) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    })
}

/// Ordinary least-squares slope of `y` against its index.
fn ols_slope(y: &[f64]) -> Option<f64> {
    let k = y.len();
    if k < 2 {
        return None;
    }
    let mean_x = (k - 1) as f64 / 2.0;
    let mean_y = y.iter().sum::<f64>() / k as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, &yj) in y.iter().enumerate() {
        let dx = j as f64 - mean_x;
        num += dx * (yj - mean_y);
        den += dx * dx;
    }
    Some(num / den)
}

fn input_echo(input: &InputSource) -> Value {
    match input {
        InputSource::Path { path } => json!({ "path": path.display().to_string() }),
        InputSource::Spec { spec } => {
            json!({ "spec": serde_json::to_value(spec).expect("spec serializes") })
        }
    }
}

fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report JSON serializes");
    text.push('\n');
    write_text(path, &text)
}
