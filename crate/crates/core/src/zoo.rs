//! A catalog of test measures whose geometry is known in advance.
//!
//! Every generator is a pure function of its spec: the same spec produces
//! the same measure bit for bit, including the seeded ones (the seed is
//! part of the spec, and the stream behind it is pinned).  Alongside the
//! atoms each generator hands back what is true about them — the carrying
//! plane, the carrying graph, or the fact that nothing carries them — so a
//! test can ask for "the true plane" instead of trusting a search.
//!
//! The inhabitants cover the edges of the flatness story: plane grids and
//! Dirac atoms (one-sided distances see nothing, transport does), a
//! full-dimensional box (bounded one-sided sums without rectifiability),
//! graph samples with and without holes (the rectifiable regime), and the
//! four-corner Cantor construction with contraction ¼ — purely
//! unrectifiable, and self-similar enough that its coefficients repeat
//! themselves scale after scale.

use std::collections::HashSet;
use std::f64::consts::TAU;

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{sigma_quadrature, LipschitzGraph};
use crate::measure::{AffinePlane, DiscreteMeasure};

/// Hard cap on generated atoms, matching the lattice builder's budget.
const MAX_ATOMS: usize = 1 << 22;

/// Height profile of a generated graph, restricted to named families so a
/// spec stays serializable.  `Ramp { slope: 0.0 }` is the flat line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum GraphShape {
    /// `u ↦ slope·u`.
    Ramp { slope: f64 },
    /// `u ↦ amplitude·sin(2π·frequency·u)`.
    Sine { amplitude: f64, frequency: f64 },
}

impl GraphShape {
    /// Sharp Lipschitz constant of the profile.
    pub fn lipschitz_bound(&self) -> f64 {
        match *self {
            GraphShape::Ramp { slope } => slope.abs(),
            GraphShape::Sine {
                amplitude,
                frequency,
            } => (amplitude * TAU * frequency).abs(),
        }
    }

    /// Realize the profile as a 1 → 2 graph over the `u`-axis.
    pub fn graph(&self) -> Result<LipschitzGraph> {
        let bound = self.lipschitz_bound();
        if !bound.is_finite() || bound > 1.0 {
            return Err(Error::InvalidParameter {
                name: "shape",
                reason: format!(
                    "profile has Lipschitz constant {bound}, outside [0, 1]"
                ),
            });
        }
        match *self {
            GraphShape::Ramp { slope } => {
                LipschitzGraph::new(1, 2, bound, move |u| vec![slope * u[0]])
            }
            GraphShape::Sine {
                amplitude,
                frequency,
            } => LipschitzGraph::new(1, 2, bound, move |u| {
                vec![amplitude * (TAU * frequency * u[0]).sin()]
            }),
        }
    }
}

/// Serializable recipe for one measure.  See [`generate`] for what each
/// kind produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// Uniform grid of `points_per_axis^base_dim` atoms on the unit patch
    /// of the first-`base_dim` coordinate plane, total mass 1.
    Flat {
        base_dim: usize,
        ambient_dim: usize,
        points_per_axis: usize,
    },
    /// Surface-measure quadrature of a named graph profile over `[0, 1)`
    /// at spacing `2^{-spacing_exp}`, optionally reweighted by the density
    /// `1 + density_amplitude·cos(2πu)`.
    LipschitzGraph {
        shape: GraphShape,
        spacing_exp: u32,
        #[serde(default)]
        density_amplitude: f64,
    },
    /// Generation-`generation` four-corner Cantor measure in the plane
    /// (contraction ¼): `4^g` atoms of mass `4^{-g}` at the cell centers.
    FourCornerCantor { generation: u32 },
    /// Uniform grid on the unit box of the first `base_dim + 1`
    /// coordinates: one dimension more than the comparison planes have.
    Slab {
        base_dim: usize,
        ambient_dim: usize,
        points_per_axis: usize,
    },
    /// Seeded atoms on the unit patch of the coordinate `plane_dim`-plane,
    /// weights drawn from `[0.5, 1.5)`.
    DiracMix {
        ambient_dim: usize,
        plane_dim: usize,
        atoms: usize,
        seed: u64,
    },
    /// Graph quadrature with every atom over `holes` seeded level-
    /// `hole_level` dyadic cells of the base interval removed.
    GraphWithHoles {
        shape: GraphShape,
        spacing_exp: u32,
        hole_level: u32,
        holes: usize,
        seed: u64,
    },
}

/// What is true about a generated measure.
#[derive(Debug, Clone)]
pub enum GroundTruth {
    /// Every atom lies on this plane.
    Plane(AffinePlane),
    /// Every atom lies on this graph (the holes generator removes atoms,
    /// never moves them).
    Graph(LipschitzGraph),
    /// Purely unrectifiable: no Lipschitz image carries a positive share.
    Unrectifiable,
    /// Spread over a box of one dimension more than the comparison planes;
    /// no plane or graph of the base dimension carries it.
    FullDimensional,
}

/// A generated measure together with its ground truth.
#[derive(Debug, Clone)]
pub struct Generated {
    pub measure: DiscreteMeasure,
    pub truth: GroundTruth,
}

fn check_atom_budget(count: u128) -> Result<usize> {
    if count == 0 {
        return Err(Error::InvalidParameter {
            name: "points",
            reason: "the spec generates no atoms".into(),
        });
    }
    if count > MAX_ATOMS as u128 {
        return Err(Error::InvalidParameter {
            name: "points",
            reason: format!("{count} atoms exceed the budget of {MAX_ATOMS}"),
        });
    }
    Ok(count as usize)
}

/// Uniform product grid over the unit box of the first `grid_dims`
/// coordinates, atom weight = cell volume.  Centered nodes keep the grid
/// φ-free: nothing sits on a cell boundary.
fn box_grid(grid_dims: usize, ambient: usize, points: usize) -> Result<DiscreteMeasure> {
    let total = check_atom_budget((points as u128).pow(grid_dims as u32))?;
    let s = 1.0 / points as f64;
    let weight = s.powi(grid_dims as i32);
    let mut m = DiscreteMeasure::new(ambient);
    for flat in 0..total {
        let mut pos = vec![0.0; ambient];
        let mut rem = flat;
        for c in pos.iter_mut().take(grid_dims) {
            *c = (rem % points) as f64 * s + 0.5 * s;
            rem /= points;
        }
        m.push(&pos, weight)?;
    }
    Ok(m)
}

fn check_plane_dims(n: usize, d: usize) -> Result<()> {
    if n == 0 || n >= d {
        return Err(Error::InvalidParameter {
            name: "base_dim",
            reason: format!(
                "plane dimension {n} must be positive and below the ambient {d}"
            ),
        });
    }
    Ok(())
}

/// Produce the measure a spec describes, with its ground truth.
///
/// Randomness only enters through the spec's own seed, so equal specs give
/// bit-identical measures — serialization included.
pub fn generate(spec: &GeneratorSpec) -> Result<Generated> {
    match spec {
        GeneratorSpec::Flat {
            base_dim,
            ambient_dim,
            points_per_axis,
        } => {
            check_plane_dims(*base_dim, *ambient_dim)?;
            let measure = box_grid(*base_dim, *ambient_dim, *points_per_axis)?;
            Ok(Generated {
                measure,
                truth: GroundTruth::Plane(AffinePlane::coordinate(
                    *ambient_dim,
                    *base_dim,
                )),
            })
        }
        GeneratorSpec::LipschitzGraph {
            shape,
            spacing_exp,
            density_amplitude,
        } => {
            let graph = shape.graph()?;
            let base = graph_sample(&graph, *spacing_exp)?;
            let measure = apply_density(&base, *density_amplitude)?;
            Ok(Generated {
                measure,
                truth: GroundTruth::Graph(graph),
            })
        }
        GeneratorSpec::FourCornerCantor { generation } => {
            let g = *generation;
            if g > 11 {
                return Err(Error::InvalidParameter {
                    name: "generation",
                    reason: format!("4^{g} atoms exceed the budget of {MAX_ATOMS}"),
                });
            }
            // Each cell of side T spawns four corner cells of side T/4 at
            // offsets {0, 3T/4}².  All offsets are dyadic with disjoint
            // bit ranges, so every coordinate below is exact.
            let mut corners: Vec<(f64, f64)> = vec![(0.0, 0.0)];
            let mut side = 1.0_f64;
            for _ in 0..g {
                let child = side / 4.0;
                let off = 3.0 * child;
                corners = corners
                    .iter()
                    .flat_map(|&(x, y)| {
                        [(x, y), (x + off, y), (x, y + off), (x + off, y + off)]
                    })
                    .collect();
                side = child;
            }
            let half = side / 2.0;
            let weight = 0.25_f64.powi(g as i32);
            let mut m = DiscreteMeasure::new(2);
            for (x, y) in corners {
                m.push(&[x + half, y + half], weight)?;
            }
            Ok(Generated {
                measure: m,
                truth: GroundTruth::Unrectifiable,
            })
        }
        GeneratorSpec::Slab {
            base_dim,
            ambient_dim,
            points_per_axis,
        } => {
            let grid_dims = base_dim + 1;
            if *base_dim == 0 || grid_dims > *ambient_dim {
                return Err(Error::InvalidParameter {
                    name: "base_dim",
                    reason: format!(
                        "a slab needs 0 < base_dim and base_dim + 1 ≤ ambient \
                         ({base_dim} + 1 vs {ambient_dim})"
                    ),
                });
            }
            let measure = box_grid(grid_dims, *ambient_dim, *points_per_axis)?;
            Ok(Generated {
                measure,
                truth: GroundTruth::FullDimensional,
            })
        }
        GeneratorSpec::DiracMix {
            ambient_dim,
            plane_dim,
            atoms,
            seed,
        } => {
            check_plane_dims(*plane_dim, *ambient_dim)?;
            check_atom_budget(*atoms as u128)?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut m = DiscreteMeasure::new(*ambient_dim);
            for _ in 0..*atoms {
                let mut pos = vec![0.0; *ambient_dim];
                for c in pos.iter_mut().take(*plane_dim) {
                    *c = rng.gen::<f64>();
                }
                let w = 0.5 + rng.gen::<f64>();
                m.push(&pos, w)?;
            }
            Ok(Generated {
                measure: m,
                truth: GroundTruth::Plane(AffinePlane::coordinate(
                    *ambient_dim,
                    *plane_dim,
                )),
            })
        }
        GeneratorSpec::GraphWithHoles {
            shape,
            spacing_exp,
            hole_level,
            holes,
            seed,
        } => {
            let graph = shape.graph()?;
            if *hole_level > 22 {
                return Err(Error::InvalidParameter {
                    name: "hole_level",
                    reason: format!("2^{hole_level} cells exceed the budget"),
                });
            }
            let cells = 1usize << *hole_level;
            if *holes >= cells {
                return Err(Error::InvalidParameter {
                    name: "holes",
                    reason: format!(
                        "removing {holes} of {cells} cells leaves nothing to measure"
                    ),
                });
            }
            let full = graph_sample(&graph, *spacing_exp)?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let chosen: HashSet<usize> =
                index::sample(&mut rng, cells, *holes).into_iter().collect();
            let scale = cells as f64;
            let mut m = DiscreteMeasure::new(2);
            for (pos, w) in full.iter() {
                let cell = (pos[0] * scale).floor() as usize;
                if !chosen.contains(&cell) {
                    m.push(pos, w)?;
                }
            }
            Ok(Generated {
                measure: m,
                truth: GroundTruth::Graph(graph),
            })
        }
    }
}

fn graph_sample(graph: &LipschitzGraph, spacing_exp: u32) -> Result<DiscreteMeasure> {
    if spacing_exp > 22 {
        return Err(Error::InvalidParameter {
            name: "spacing_exp",
            reason: format!("2^{spacing_exp} atoms exceed the budget of {MAX_ATOMS}"),
        });
    }
    sigma_quadrature(graph, &[0.0], &[1.0], 0.5_f64.powi(spacing_exp as i32))
}

fn apply_density(base: &DiscreteMeasure, amplitude: f64) -> Result<DiscreteMeasure> {
    if amplitude == 0.0 {
        return Ok(base.clone());
    }
    if !(amplitude.is_finite() && amplitude.abs() < 1.0) {
        return Err(Error::InvalidParameter {
            name: "density_amplitude",
            reason: format!("{amplitude} does not keep 1 + a·cos positive"),
        });
    }
    DiscreteMeasure::from_rows(
        base.dim(),
        base.iter()
            .map(|(pos, w)| (pos.to_vec(), w * (1.0 + amplitude * (TAU * pos[0]).cos()))),
    )
}
