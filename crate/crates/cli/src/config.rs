//! On-disk JSON schema for the `analyze` and `tree` subcommands.
//!
//! Everything an analysis run does is pinned by the config file: where the
//! measure comes from (a file or a generator recipe), which centers and
//! dyadic scales to profile, which coefficients to track, and how hard the
//! plane search works.  Seeds live in the config too, so rerunning the same
//! file over the same inputs reproduces every output byte for byte.
//!
//! A minimal analysis config:
//!
//! ```json
//! {
//!   "input": {"spec": {"kind": "flat", "base_dim": 1, "ambient_dim": 2, "points_per_axis": 128}},
//!   "centers": {"subsample": {"count": 8, "seed": 1}},
//!   "scales": {"r0": 0.25, "depth": 4},
//!   "coefficients": ["alpha2", "beta2"],
//!   "plane_dim": 1,
//!   "out_dir": "reports"
//! }
//! ```

use std::path::PathBuf;
use std::str::FromStr;

use flatscan_core::coeffs::{CoefficientKind, ProfileConfig, SearchConfig};
use flatscan_core::measure::AffinePlane;
use flatscan_core::zoo::GeneratorSpec;
use serde::Deserialize;

use crate::CliError;

/// Where the measure under analysis comes from.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum InputSource {
    /// A measure file; `.json` and `.csv` are routed by extension.
    Path { path: PathBuf },
    /// A generator recipe, evaluated in-process.
    Spec { spec: GeneratorSpec },
}

/// Which points to profile around.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CenterSpec {
    /// Explicit list of ambient points.
    List { list: Vec<Vec<f64>> },
    /// A seeded draw of distinct atom positions from the input measure.
    Subsample { subsample: SubsampleSpec },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleSpec {
    pub count: usize,
    pub seed: u64,
}

/// Dyadic ladder `r_k = r0·2^{-k}`, `k = 0..depth`.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSpec {
    pub r0: f64,
    pub depth: usize,
}

/// Transport engine for ad-hoc distance queries.  Profile runs always use
/// the exact solver: the entropic one only upper-bounds the distance, which
/// would silently bias every square sum, so `analyze` refuses it.
#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverChoice {
    Exact,
    Entropic {
        epsilon: f64,
        #[serde(default = "default_max_iters")]
        max_iters: usize,
    },
}

fn default_max_iters() -> usize {
    10_000
}

impl Default for SolverChoice {
    fn default() -> Self {
        SolverChoice::Exact
    }
}

/// Plane-search effort knobs, mirroring the library defaults.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSettings {
    pub quad_spacing_frac: f64,
    pub refine_evals: usize,
    pub grid_fallback: bool,
}

impl Default for SearchSettings {
    fn default() -> Self {
        let cfg = SearchConfig::default();
        SearchSettings {
            quad_spacing_frac: cfg.quad_spacing_frac,
            refine_evals: cfg.refine_evals,
            grid_fallback: cfg.grid_fallback,
        }
    }
}

impl SearchSettings {
    pub fn to_search_config(self) -> SearchConfig {
        SearchConfig {
            quad_spacing_frac: self.quad_spacing_frac,
            refine_evals: self.refine_evals,
            grid_fallback: self.grid_fallback,
        }
    }
}

/// A fixed plane, for profiles that compare against one instead of
/// searching.  Directions are orthonormalized on construction.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneSpec {
    pub base: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
}

impl PlaneSpec {
    pub fn to_plane(&self) -> Result<AffinePlane, CliError> {
        AffinePlane::new(self.base.clone(), &self.directions).map_err(CliError::Core)
    }
}

/// Stopping-tree construction settings.  Requires a generated graph input:
/// the tree grows over the measure's carrier graph, and the big-ball factor
/// is the fixed geometric constant, not a knob.  Exactly one of `m` and
/// `m_sweep` must be present.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSettings {
    pub m: Option<f64>,
    pub m_sweep: Option<Vec<f64>>,
    pub lambda: f64,
    pub epsilon: f64,
    pub depth: usize,
    /// Base cube of the forest; defaults to the unit cube at the origin.
    #[serde(default)]
    pub root: Option<RootSpec>,
    /// Shift family; defaults to all `2^n` binary shifts.
    #[serde(default)]
    pub shifts: Option<Vec<Vec<u8>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RootSpec {
    pub corner: Vec<f64>,
    pub side: f64,
}

/// Top-level config for `analyze`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub input: InputSource,
    pub centers: CenterSpec,
    pub scales: ScaleSpec,
    /// Coefficient names as accepted by the library parser: `alpha1`,
    /// `alpha2`, `alpha_hat`, `beta1`, `beta2`, `bilateral_beta2`,
    /// `tolsa_alpha`, `delta`.
    pub coefficients: Vec<String>,
    /// Dimension of the comparison planes.
    pub plane_dim: usize,
    #[serde(default)]
    pub solver: SolverChoice,
    #[serde(default)]
    pub search: SearchSettings,
    /// Needed only when `alpha_hat` is among the coefficients.
    #[serde(default)]
    pub reference_plane: Option<PlaneSpec>,
    #[serde(default)]
    pub tree: Option<TreeSettings>,
    /// Report directory; the `--out` flag overrides it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl AnalysisConfig {
    /// Check everything that does not need the measure in hand: referenced
    /// paths exist, the ladder is nonempty, names parse, and option
    /// combinations make sense.  Returns the parsed coefficient kinds.
    pub fn validate(&self) -> Result<Vec<CoefficientKind>, CliError> {
        if let InputSource::Path { path } = &self.input {
            if !path.exists() {
                return Err(CliError::Config {
                    reason: format!("input path {} does not exist", path.display()),
                });
            }
        }
        if !(self.scales.r0 > 0.0 && self.scales.r0.is_finite()) {
            return Err(CliError::Config {
                reason: format!("scales.r0 = {} must be positive and finite", self.scales.r0),
            });
        }
        if self.scales.depth == 0 {
            return Err(CliError::Config {
                reason: "scales.depth must be at least 1".into(),
            });
        }
        if self.coefficients.is_empty() {
            return Err(CliError::Config {
                reason: "coefficients must name at least one kind".into(),
            });
        }
        let mut kinds = Vec::with_capacity(self.coefficients.len());
        for name in &self.coefficients {
            kinds.push(CoefficientKind::from_str(name).map_err(CliError::Core)?);
        }
        if kinds.contains(&CoefficientKind::AlphaHat) && self.reference_plane.is_none() {
            return Err(CliError::Config {
                reason: "alpha_hat profiles need a reference_plane".into(),
            });
        }
        if let SolverChoice::Entropic { .. } = self.solver {
            return Err(CliError::Config {
                reason: "profiles are exact-transport quantities; the entropic solver is \
                         only available through the transport subcommand"
                    .into(),
            });
        }
        if let CenterSpec::Subsample { subsample } = &self.centers {
            if subsample.count == 0 {
                return Err(CliError::Config {
                    reason: "centers.subsample.count must be at least 1".into(),
                });
            }
        }
        if let Some(tree) = &self.tree {
            tree.validate()?;
            if !matches!(self.input, InputSource::Spec { .. }) {
                return Err(CliError::Config {
                    reason: "tree output needs a generated graph input, not a file path".into(),
                });
            }
        }
        Ok(kinds)
    }

    pub fn profile_config(&self) -> Result<ProfileConfig, CliError> {
        let reference_plane = match &self.reference_plane {
            Some(spec) => Some(spec.to_plane()?),
            None => None,
        };
        Ok(ProfileConfig {
            plane_dim: self.plane_dim,
            search: self.search.to_search_config(),
            reference_plane,
        })
    }
}

impl TreeSettings {
    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.m, &self.m_sweep) {
            (Some(_), Some(_)) => Err(CliError::Config {
                reason: "tree.m and tree.m_sweep are mutually exclusive".into(),
            }),
            (None, None) => Err(CliError::Config {
                reason: "tree needs either m or m_sweep".into(),
            }),
            (None, Some(s)) if s.is_empty() => Err(CliError::Config {
                reason: "tree.m_sweep must list at least one candidate".into(),
            }),
            _ => {
                if self.depth == 0 {
                    return Err(CliError::Config {
                        reason: "tree.depth must be at least 1".into(),
                    });
                }
                Ok(())
            }
        }
    }
}

/// Top-level config for the standalone `tree` subcommand: a graph recipe
/// plus the same settings block `analyze` embeds.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeRunConfig {
    /// Generator for the sample measure; must produce a graph-carried one
    /// (`lipschitz_graph` or `graph_with_holes`).
    pub input: GeneratorSpec,
    pub tree: TreeSettings,
}
