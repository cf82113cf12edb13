//! Batch front door for the measure-geometry toolkit: generate sample
//! measures, profile flatness coefficients over dyadic scales, compute
//! transport distances between measure files, build stopping-time forests,
//! and sanity-check Whitney decompositions.
//!
//! Every run is config-driven and seeded; nothing reads the environment or
//! the clock, so identical invocations produce identical bytes.  Fatal
//! errors print one machine-readable JSON object on stdout and exit
//! nonzero.

mod analyze;
mod config;
mod forest;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flatscan_core::measure::DiscreteMeasure;
use flatscan_core::transport::{
    entropic_wasserstein, exact_wasserstein_with, MassPolicy, TransportResult,
};
use flatscan_core::whitney::{build_whitney, validate_whitney, WhitneyConfig};
use flatscan_core::zoo::{generate, GeneratorSpec, GraphShape, GroundTruth};
use flatscan_core::Error as CoreError;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "flatscan",
    version,
    about = "Multiscale flatness analysis of discrete measures"
)]
struct Cli {
    /// Worker threads for batch loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Profile coefficients over centers and dyadic scales per a JSON config.
    Analyze {
        /// Analysis config file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Report directory; overrides out_dir from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a built-in sample measure to a file.
    Generate {
        /// Built-in recipe: flat, graph, cantor, slab, dirac, holes.
        #[arg(long, conflicts_with = "spec")]
        kind: Option<String>,
        /// Generator spec file (JSON) for tuned parameters.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output measure file (.json or .csv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a Whitney decomposition around a graph and check its geometry.
    ValidateWhitney {
        /// Ramp graph with this slope.
        #[arg(long, conflicts_with_all = ["amplitude", "frequency"])]
        slope: Option<f64>,
        /// Sine graph amplitude (default shape: amplitude 0.1, frequency 1).
        #[arg(long, requires = "frequency")]
        amplitude: Option<f64>,
        /// Sine graph frequency.
        #[arg(long, requires = "amplitude")]
        frequency: Option<f64>,
        /// Ambient corner of the root box (pre-shift), comma-separated.
        #[arg(long, default_value = "-1,-1", allow_hyphen_values = true)]
        root_corner: String,
        #[arg(long, default_value_t = 2.0)]
        root_side: f64,
        /// Grid shift bits (one per base coordinate), comma-separated.
        #[arg(long, default_value = "0")]
        shift: String,
        /// Clearance factor between cube side and distance to the graph.
        #[arg(long, default_value_t = 40.0)]
        k_factor: f64,
        /// Smallest cube side before truncation.
        #[arg(long, default_value_t = 1.0 / 256.0)]
        min_side: f64,
        /// Also write the full decomposition JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grow a shifted stopping-time forest over a generated graph sample.
    Tree {
        /// Tree config file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Write the forest JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Wasserstein distance between two measure files.
    Transport {
        #[arg(long)]
        mu: PathBuf,
        #[arg(long)]
        nu: PathBuf,
        /// Cost exponent (1 or 2).
        #[arg(long, default_value_t = 2)]
        p: u32,
        /// Transport engine: exact or entropic.
        #[arg(long, default_value = "exact")]
        solver: String,
        /// Entropic regularization strength.
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        /// Entropic iteration cap.
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
        /// Scale the lighter measure up when total masses differ.
        #[arg(long)]
        rescale: bool,
        /// Include the full transport plan in the output.
        #[arg(long)]
        plan: bool,
    },
}

/// Anything that aborts a run.  Core errors pass through; config and io
/// problems carry enough context to act on.
#[derive(Debug)]
pub enum CliError {
    Core(CoreError),
    Config { reason: String },
    Io { path: PathBuf, source: std::io::Error },
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config { reason } => write!(f, "invalid config: {reason}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

/// One stable JSON shape for every failure: `{"error": {"kind", "message",
/// ...}}`, with structured extras where the variant has them — a parse
/// error names its line, an io error its path.
fn error_json(err: &CliError) -> Value {
    let mut body = serde_json::Map::new();
    let kind = match err {
        CliError::Core(e) => match e {
            CoreError::DimensionMismatch { .. } => "dimension_mismatch",
            CoreError::InvalidAtom { index, .. } => {
                body.insert("index".into(), json!(index));
                "invalid_atom"
            }
            CoreError::InvalidParameter { name, .. } => {
                body.insert("parameter".into(), json!(name));
                "invalid_parameter"
            }
            CoreError::DegenerateFrame(_) => "degenerate_frame",
            CoreError::EmptyMeasure(_) => "empty_measure",
            CoreError::MassMismatch { mu, nu } => {
                body.insert("mu_mass".into(), json!(mu));
                body.insert("nu_mass".into(), json!(nu));
                "mass_mismatch"
            }
            CoreError::OracleTooLarge(_) => "oracle_too_large",
            CoreError::Certificate(_) => "certificate",
            CoreError::EntropicDiverged { iterations, .. } => {
                body.insert("iterations".into(), json!(iterations));
                "entropic_diverged"
            }
            CoreError::UndefinedCoefficient(_) => "undefined_coefficient",
            CoreError::NoIntersection(_) => "no_intersection",
            CoreError::LipschitzViolation { .. } => "lipschitz_violation",
            CoreError::NoContainer(_) => "no_container",
            CoreError::SupportEscapes(_) => "support_escapes",
            CoreError::EmptyCube(_) => "empty_cube",
            CoreError::Parse { line, .. } => {
                body.insert("line".into(), json!(line));
                "parse"
            }
            CoreError::Io(_) => "io",
            CoreError::Json(_) => "json",
        },
        CliError::Config { .. } => "config",
        CliError::Io { path, .. } => {
            body.insert("path".into(), json!(path.display().to_string()));
            "io"
        }
    };
    body.insert("kind".into(), json!(kind));
    body.insert("message".into(), json!(err.to_string()));
    json!({ "error": body })
}

/// Load a measure file, routed by extension.
pub fn load_measure(path: &Path) -> Result<DiscreteMeasure, CliError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => DiscreteMeasure::read_json(path).map_err(CliError::Core),
        Some("csv") => DiscreteMeasure::read_csv(path).map_err(CliError::Core),
        _ => Err(CliError::Config {
            reason: format!(
                "{}: measure files must end in .json or .csv",
                path.display()
            ),
        }),
    }
}

fn write_measure(path: &Path, mu: &DiscreteMeasure) -> Result<(), CliError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => mu.write_json(path).map_err(CliError::Core),
        Some("csv") => mu.write_csv(path).map_err(CliError::Core),
        _ => Err(CliError::Config {
            reason: format!(
                "{}: measure files must end in .json or .csv",
                path.display()
            ),
        }),
    }
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config {
        reason: format!("{}: {e}", path.display()),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Ignore a second initialization (e.g. the default pool already
        // spun up); the run stays correct, just not resized.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match dispatch(cli.command) {
        Ok(clean) => {
            if clean {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            println!(
                "{}",
                serde_json::to_string_pretty(&error_json(&err)).expect("error JSON serializes")
            );
            ExitCode::FAILURE
        }
    }
}

/// `Ok(false)` means the run completed but a validation reported failures;
/// the report has already been printed, so no error JSON follows.
fn dispatch(command: Command) -> Result<bool, CliError> {
    match command {
        Command::Analyze { config, out } => {
            let cfg: config::AnalysisConfig = read_json_file(&config)?;
            let dir = analyze::run_analysis(&cfg, out.as_deref())?;
            println!("report bundle in {}", dir.display());
            Ok(true)
        }
        Command::Generate { kind, spec, out } => run_generate(kind, spec, &out),
        Command::ValidateWhitney {
            slope,
            amplitude,
            frequency,
            root_corner,
            root_side,
            shift,
            k_factor,
            min_side,
            out,
        } => {
            let shape = match (slope, amplitude, frequency) {
                (Some(s), _, _) => GraphShape::Ramp { slope: s },
                (None, Some(a), Some(f)) => GraphShape::Sine {
                    amplitude: a,
                    frequency: f,
                },
                _ => GraphShape::Sine {
                    amplitude: 0.1,
                    frequency: 1.0,
                },
            };
            run_validate_whitney(
                &shape,
                root_corner,
                root_side,
                shift,
                WhitneyConfig { k_factor, min_side },
                out.as_deref(),
            )
        }
        Command::Tree { config, out } => {
            let cfg: config::TreeRunConfig = read_json_file(&config)?;
            let report = forest::run_forest(&cfg.input, &cfg.tree)?;
            emit(&report, out.as_deref())?;
            Ok(true)
        }
        Command::Transport {
            mu,
            nu,
            p,
            solver,
            epsilon,
            max_iters,
            rescale,
            plan,
        } => run_transport(&mu, &nu, p, &solver, epsilon, max_iters, rescale, plan),
    }
}

fn builtin_spec(kind: &str) -> Result<GeneratorSpec, CliError> {
    let spec = match kind {
        "flat" => GeneratorSpec::Flat {
            base_dim: 1,
            ambient_dim: 2,
            points_per_axis: 128,
        },
        "graph" => GeneratorSpec::LipschitzGraph {
            shape: GraphShape::Sine {
                amplitude: 0.1,
                frequency: 1.0,
            },
            spacing_exp: 7,
            density_amplitude: 0.0,
        },
        "cantor" => GeneratorSpec::FourCornerCantor { generation: 5 },
        "slab" => GeneratorSpec::Slab {
            base_dim: 1,
            ambient_dim: 2,
            points_per_axis: 32,
        },
        "dirac" => GeneratorSpec::DiracMix {
            ambient_dim: 2,
            plane_dim: 1,
            atoms: 12,
            seed: 7,
        },
        "holes" => GeneratorSpec::GraphWithHoles {
            shape: GraphShape::Sine {
                amplitude: 0.1,
                frequency: 1.0,
            },
            spacing_exp: 7,
            hole_level: 3,
            holes: 2,
            seed: 7,
        },
        other => {
            return Err(CliError::Config {
                reason: format!(
                    "unknown kind {other:?}; expected flat, graph, cantor, slab, dirac, or holes"
                ),
            })
        }
    };
    Ok(spec)
}

fn truth_label(truth: &GroundTruth) -> &'static str {
    match truth {
        GroundTruth::Plane(_) => "carried by a plane",
        GroundTruth::Graph(_) => "carried by a Lipschitz graph",
        GroundTruth::Unrectifiable => "purely unrectifiable",
        GroundTruth::FullDimensional => "full-dimensional",
    }
}

fn run_generate(
    kind: Option<String>,
    spec: Option<PathBuf>,
    out: &Path,
) -> Result<bool, CliError> {
    let spec = match (kind, spec) {
        (Some(kind), None) => builtin_spec(&kind)?,
        (None, Some(path)) => read_json_file(&path)?,
        _ => {
            return Err(CliError::Config {
                reason: "generate needs exactly one of --kind or --spec".into(),
            })
        }
    };
    let generated = generate(&spec)?;
    write_measure(out, &generated.measure)?;
    println!(
        "wrote {} atoms, total mass {}, dim {} ({}) -> {}",
        generated.measure.len(),
        generated.measure.total_mass(),
        generated.measure.dim(),
        truth_label(&generated.truth),
        out.display()
    );
    Ok(true)
}

fn run_validate_whitney(
    shape: &GraphShape,
    root_corner: f64,
    root_side: f64,
    shift: u8,
    cfg: WhitneyConfig,
    out: Option<&Path>,
) -> Result<bool, CliError> {
    let graph = shape.graph()?;
    let deco = build_whitney(&graph, &[root_corner], root_side, &[shift], &cfg)?;
    let report = validate_whitney(&deco, &graph);
    let all_pass = report.all_pass(cfg.k_factor);
    let summary = json!({
        "shape": serde_json::to_value(shape).expect("shape serializes"),
        "root": { "corner": [root_corner], "side": root_side, "shift": [shift] },
        "k_factor": cfg.k_factor,
        "min_side": cfg.min_side,
        "report": report.to_json_value(),
        "all_pass": all_pass,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("report serializes")
    );
    if let Some(path) = out {
        let full = json!({
            "summary": summary,
            "decomposition": deco.to_json_value(),
        });
        emit(&full, Some(path))?;
    }
    if !all_pass {
        eprintln!("whitney validation failed");
    }
    Ok(all_pass)
}

#[allow(clippy::too_many_arguments)]
fn run_transport(
    mu_path: &Path,
    nu_path: &Path,
    p: u32,
    solver: &str,
    epsilon: f64,
    max_iters: usize,
    rescale: bool,
    plan: bool,
) -> Result<bool, CliError> {
    let mu = load_measure(mu_path)?;
    let nu = load_measure(nu_path)?;
    let result: TransportResult = match solver {
        "exact" => {
            let policy = if rescale {
                MassPolicy::RescaleSmaller
            } else {
                MassPolicy::Strict
            };
            exact_wasserstein_with(&mu, &nu, p, policy)?
        }
        "entropic" => {
            // The entropic engine insists on matched masses, so the rescale
            // happens out here.
            let (a, b) = (mu.total_mass(), nu.total_mass());
            if rescale && a < b {
                entropic_wasserstein(&mu.scaled(b / a), &nu, p, epsilon, max_iters)?
            } else if rescale && b < a {
                entropic_wasserstein(&mu, &nu.scaled(a / b), p, epsilon, max_iters)?
            } else {
                entropic_wasserstein(&mu, &nu, p, epsilon, max_iters)?
            }
        }
        other => {
            return Err(CliError::Config {
                reason: format!("unknown solver {other:?}; expected exact or entropic"),
            })
        }
    };
    let mut out = json!({
        "p": p,
        "solver": result.solver.as_str(),
        "distance": result.distance,
        "mu": { "path": mu_path.display().to_string(), "atoms": mu.len(), "mass": mu.total_mass() },
        "nu": { "path": nu_path.display().to_string(), "atoms": nu.len(), "mass": nu.total_mass() },
        "plan_entries": result.plan.entries.len(),
    });
    if plan {
        out["plan"] = json!(result.plan.entries);
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("result serializes")
    );
    Ok(true)
}

/// Print to stdout or write to a file, always with a trailing newline.
fn emit(value: &Value, out: Option<&Path>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
