//! Stopping-forest runner shared by `analyze` (the optional `tree` block)
//! and the standalone `tree` subcommand.
//!
//! The forest grows over a generated graph sample, with the sample standing
//! in as its own per-shift approximation — exact for a graph-carried
//! measure, and it keeps the run self-contained.  The interesting knobs
//! (density threshold, ball inflation, depth, shift family) all come from
//! the settings block.

use flatscan_core::graph::GammaCube;
use flatscan_core::measure::DiscreteMeasure;
use flatscan_core::tree::{
    build_stopping_tree, stop_mass, sweep_m, validate_tree, TreeThresholds,
};
use flatscan_core::zoo::{generate, GeneratorSpec, GroundTruth};
use serde_json::{json, Value};

use crate::config::TreeSettings;
use crate::CliError;

/// Every binary shift of the base grid, in odometer order.
fn all_shifts(n: usize) -> Vec<Vec<u8>> {
    (0..1usize << n)
        .map(|mask| (0..n).map(|i| ((mask >> i) & 1) as u8).collect())
        .collect()
}

/// Generate the graph sample named by `spec` and grow (or sweep) the forest
/// per `settings`.  The returned JSON carries the forest, a per-tree
/// validation report, and the sweep table when one was requested.
pub fn run_forest(spec: &GeneratorSpec, settings: &TreeSettings) -> Result<Value, CliError> {
    settings.validate()?;
    let generated = generate(spec).map_err(CliError::Core)?;
    let graph = match generated.truth {
        GroundTruth::Graph(g) => g,
        _ => {
            return Err(CliError::Config {
                reason: "tree input must generate a graph-carried measure \
                         (lipschitz_graph or graph_with_holes)"
                    .into(),
            })
        }
    };
    let mu = generated.measure;
    let n = graph.dim_base();
    let (corner, side) = match &settings.root {
        Some(r) => (r.corner.clone(), r.side),
        None => (vec![0.0; n], 1.0),
    };
    let root =
        GammaCube::new(&graph, corner, side, vec![0; n]).map_err(CliError::Core)?;
    let shifts = settings.shifts.clone().unwrap_or_else(|| all_shifts(n));
    let nu_family: Vec<(Vec<u8>, DiscreteMeasure)> =
        shifts.iter().map(|e| (e.clone(), mu.clone())).collect();

    let mut out = serde_json::Map::new();
    let m = match settings.m {
        Some(m) => Some(m),
        None => {
            let candidates = settings.m_sweep.as_deref().expect("validated");
            let sweep = sweep_m(
                &mu,
                &nu_family,
                &graph,
                &root,
                settings.depth,
                settings.lambda,
                settings.epsilon,
                candidates,
            )
            .map_err(CliError::Core)?;
            out.insert("sweep".into(), sweep.to_json_value());
            sweep.chosen()
        }
    };

    match m {
        Some(m) => {
            let thresholds = TreeThresholds {
                m,
                lambda: settings.lambda,
                epsilon: settings.epsilon,
            };
            let forest =
                build_stopping_tree(&mu, &nu_family, &graph, &root, settings.depth, thresholds)
                    .map_err(CliError::Core)?;
            let validation: Vec<Value> = forest
                .per_shift()
                .iter()
                .map(|st| {
                    let trees: Vec<Value> = st
                        .trees()
                        .iter()
                        .map(|tree| {
                            let report = validate_tree(tree, &mu, &mu);
                            json!({
                                "report": report.to_json_value(),
                                "all_pass": report.all_pass(),
                                "stop_mass": stop_mass(tree, &mu),
                            })
                        })
                        .collect();
                    json!({ "shift": st.shift(), "trees": trees })
                })
                .collect();
            out.insert("forest".into(), forest.to_json_value(&mu));
            out.insert("validation".into(), Value::Array(validation));
        }
        // A sweep where no candidate reached the stop-mass target: report
        // the table and nothing else, so the miss stays visible.
        None => {}
    }
    Ok(Value::Object(out))
}
