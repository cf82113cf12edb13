//! Graph-side approximations of an ambient measure.
//!
//! Off-graph mass is projected onto the graph cube by cube: each Whitney
//! cube `P` fine enough to pass the scale filter deposits its mass on the
//! surface-quadrature nodes over its base footprint, as the density
//! `μ(P)/ℓ(P)ⁿ` against the surface measure.  The result is a measure
//! supported on the graph that tracks the original at every scale coarser
//! than the filter.
//!
//! Two companions live here as well: a restricted flatness coefficient
//! measured inside the vertical cylinder over a graph cube (with a hard
//! branch to 1 when the candidate plane is too steep for the cylinder to
//! cut a bounded slab out of it), and a localized auxiliary measure that
//! keeps original atom positions but reweights each Whitney cube by how
//! much of its projected footprint a cutoff window sees.

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::graph::{
    find_shifted_container, sigma_quadrature, GammaCube, LipschitzGraph, ShiftedContainer,
};
use crate::measure::{cutoff_value, plane_angle, AffinePlane, DiscreteMeasure};
use crate::transport::exact_wasserstein;
use crate::vecmath::dist;
use crate::whitney::{box_distance, whitney_filter, WhitneyCube, WhitneyDecomposition};

/// Default steepness threshold for the branch to 1: planes with sine-angle
/// above `1 − EPS0` against the base plane are declared maximally tilted.
pub const DEFAULT_EPS0: f64 = 0.1;

/// One Whitney cube's contribution to a projected measure.
#[derive(Debug, Clone)]
pub struct ProjectedDensity {
    source_cube: WhitneyCube,
    mass: f64,
    density: f64,
    node_indices: Vec<usize>,
    fallback: bool,
}

impl ProjectedDensity {
    pub fn source_cube(&self) -> &WhitneyCube {
        &self.source_cube
    }

    /// Mass of the original measure inside the source cube.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// `μ(P)/ℓ(P)ⁿ`, the density of the projected contribution against
    /// the surface measure.
    pub fn density(&self) -> f64 {
        self.density
    }

    /// Indices into the output measure of the nodes that received mass.
    pub fn node_indices(&self) -> &[usize] {
        &self.node_indices
    }

    /// True when the footprint held no quadrature node and the whole mass
    /// went to the nearest node instead.
    pub fn fallback(&self) -> bool {
        self.fallback
    }

    /// Base footprint `(corner, side)` of the source cube.
    pub fn footprint(&self, n: usize) -> (&[f64], f64) {
        (&self.source_cube.corner()[..n], self.source_cube.side())
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "corner": self.source_cube.corner(),
            "side": self.source_cube.side(),
            "mass": self.mass,
            "density": self.density,
            "nodes": self.node_indices,
            "fallback": self.fallback,
        })
    }
}

/// A projected measure together with its provenance.
#[derive(Debug, Clone)]
pub struct ApproxMeasure {
    measure: DiscreteMeasure,
    densities: Vec<ProjectedDensity>,
    graph_atoms: usize,
    dropped_mass: f64,
}

impl ApproxMeasure {
    pub fn measure(&self) -> &DiscreteMeasure {
        &self.measure
    }

    pub fn into_measure(self) -> DiscreteMeasure {
        self.measure
    }

    /// Per-cube provenance, in the scale filter's cube order.
    pub fn densities(&self) -> &[ProjectedDensity] {
        &self.densities
    }

    /// Number of leading atoms carried over verbatim as on-graph mass.
    pub fn graph_atoms(&self) -> usize {
        self.graph_atoms
    }

    /// Off-graph mass in cubes too coarse for the filter, or outside the
    /// decomposed box entirely.
    pub fn dropped_mass(&self) -> f64 {
        self.dropped_mass
    }

    pub fn fallback_count(&self) -> usize {
        self.densities.iter().filter(|d| d.fallback).count()
    }

    /// Mass contributed through Whitney cubes (everything except the
    /// carried-over on-graph atoms).
    pub fn projected_mass(&self) -> f64 {
        self.densities.iter().map(|d| d.mass).sum()
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "measure": self.measure.to_json_value(),
            "graph_atoms": self.graph_atoms,
            "dropped_mass": self.dropped_mass,
            "cubes": self.densities.iter().map(|d| d.to_json_value()).collect::<Vec<_>>(),
        })
    }
}

/// Whether an atom counts as already lying on the graph, with a tolerance
/// that scales with the point's magnitude: floating-point clouds never sit
/// exactly on a graph.
fn on_graph(graph: &LipschitzGraph, x: &[f64]) -> bool {
    let n = graph.dim_base();
    let heights = graph.height(&x[..n]);
    let gap: f64 = x[n..]
        .iter()
        .zip(&heights)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    gap <= 1e-9 * (1.0 + norm)
}

/// Surface quadrature over the decomposition's base box.
fn sigma_over(
    graph: &LipschitzGraph,
    deco: &WhitneyDecomposition,
    h: f64,
) -> Result<DiscreteMeasure> {
    let n = graph.dim_base();
    let lo: Vec<f64> = deco
        .root_corner()
        .iter()
        .take(n)
        .zip(deco.shift())
        .map(|(&c, &e)| c + e as f64 / 3.0)
        .collect();
    let hi: Vec<f64> = lo.iter().map(|&c| c + deco.root_side()).collect();
    sigma_quadrature(graph, &lo, &hi, h)
}

/// Project a measure onto the graph through a Whitney decomposition.
///
/// Atoms already on the graph pass through verbatim.  Every other atom is
/// looked up in the scale-`k` sub-family (sidelength at most `2^{−k}`);
/// the mass collected by a cube `P` is spread over the quadrature nodes
/// whose base point lies in `P`'s half-open base footprint, proportionally
/// to node weights, so each cube's mass is conserved exactly.  Atoms in
/// cubes too coarse for the filter, or outside the decomposed box, are
/// dropped and accounted in `dropped_mass`.  A cube whose footprint holds
/// no node sends its mass to the nearest node and is flagged.
///
/// Per-cube contributions are independent and accumulated by node index,
/// so the result does not depend on processing order.
pub fn approx_measure(
    mu: &DiscreteMeasure,
    graph: &LipschitzGraph,
    deco: &WhitneyDecomposition,
    k: i32,
    h: f64,
) -> Result<ApproxMeasure> {
    let d = graph.dim_ambient();
    let n = graph.dim_base();
    if mu.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: mu.dim(),
        });
    }
    let sigma = sigma_over(graph, deco, h)?;
    let family = whitney_filter(deco.cubes(), k);

    let mut graph_rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut cube_mass = vec![0.0_f64; family.len()];
    let mut dropped = 0.0;
    for (pos, w) in mu.iter() {
        if w == 0.0 {
            continue;
        }
        if on_graph(graph, pos) {
            graph_rows.push((pos.to_vec(), w));
        } else if let Some(i) = family.iter().position(|c| c.contains(pos)) {
            cube_mass[i] += w;
        } else {
            dropped += w;
        }
    }

    let mut node_acc = vec![0.0_f64; sigma.len()];
    let mut pending: Vec<(usize, Vec<usize>, bool)> = Vec::new();
    for (i, cube) in family.iter().enumerate() {
        if cube_mass[i] == 0.0 {
            continue;
        }
        let base = &cube.corner()[..n];
        let side = cube.side();
        let nodes: Vec<usize> = (0..sigma.len())
            .filter(|&j| {
                let u = &sigma.position(j)[..n];
                base.iter().zip(u).all(|(&c, &ui)| c <= ui && ui < c + side)
            })
            .collect();
        if nodes.is_empty() {
            let nearest = (0..sigma.len())
                .min_by(|&a, &b| {
                    box_distance(base, side, &sigma.position(a)[..n])
                        .total_cmp(&box_distance(base, side, &sigma.position(b)[..n]))
                })
                .ok_or(Error::EmptyMeasure("surface quadrature"))?;
            node_acc[nearest] += cube_mass[i];
            pending.push((i, vec![nearest], true));
        } else {
            let wsum: f64 = nodes.iter().map(|&j| sigma.weight(j)).sum();
            for &j in &nodes {
                node_acc[j] += cube_mass[i] * sigma.weight(j) / wsum;
            }
            pending.push((i, nodes, false));
        }
    }

    let mut measure = DiscreteMeasure::new(d);
    for (pos, w) in &graph_rows {
        measure.push(pos, *w)?;
    }
    // Map surviving quadrature nodes to their indices in the output.
    let mut out_index = vec![usize::MAX; sigma.len()];
    let mut next = graph_rows.len();
    for j in 0..sigma.len() {
        if node_acc[j] > 0.0 {
            measure.push(sigma.position(j), node_acc[j])?;
            out_index[j] = next;
            next += 1;
        }
    }
    let densities = pending
        .into_iter()
        .map(|(i, nodes, fallback)| ProjectedDensity {
            source_cube: family[i].clone(),
            mass: cube_mass[i],
            density: cube_mass[i] / family[i].side().powi(n as i32),
            node_indices: nodes.iter().map(|&j| out_index[j]).collect(),
            fallback,
        })
        .collect();

    Ok(ApproxMeasure {
        measure,
        densities,
        graph_atoms: graph_rows.len(),
        dropped_mass: dropped,
    })
}

/// Sine-angle of a plane against the coordinate base plane.
pub fn base_angle(l: &AffinePlane) -> Result<f64> {
    let l0 = AffinePlane::coordinate(l.dim_ambient(), l.dim_plane());
    plane_angle(l, &l0)
}

/// Quadrature of the flat measure on `L` restricted to the vertical
/// cylinder over a graph cube.
///
/// Nodes sit at plane coordinates `(m + ½)h` and only those whose ambient
/// point projects vertically into the cube's base footprint are kept, each
/// with weight `hⁿ`.  The enumeration range is the preimage of the base
/// box under the plane's horizontal part, which is invertible precisely
/// when the plane is not too steep — steeper planes are rejected, matching
/// the branch to 1 of the restricted coefficient.
pub fn vertical_flat_quadrature(
    q: &GammaCube,
    l: &AffinePlane,
    eps0: f64,
    h: f64,
) -> Result<DiscreteMeasure> {
    let n = l.dim_plane();
    let d = l.dim_ambient();
    if q.shift().len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.shift().len(),
        });
    }
    if !(eps0 > 0.0 && eps0 < 1.0) {
        return Err(Error::InvalidParameter {
            name: "eps0",
            reason: format!("{eps0} is not in (0, 1)"),
        });
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "h",
            reason: format!("{h} is not a positive spacing"),
        });
    }
    let angle = base_angle(l)?;
    if angle > 1.0 - eps0 {
        return Err(Error::DegenerateFrame(format!(
            "plane at sine-angle {angle:.3} exceeds the steepness threshold {:.3}",
            1.0 - eps0
        )));
    }

    // Horizontal part of the plane parametrization: t ↦ c + M t.
    let mut m = nalgebra::DMatrix::zeros(n, n);
    for j in 0..n {
        let row = l.frame_row(j);
        for i in 0..n {
            m[(i, j)] = row[i];
        }
    }
    let c = &l.base_point()[..n];
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::DegenerateFrame("horizontal part is singular".into()))?;

    // Plane-coordinate bounding box of the base footprint's preimage.
    let mut t_lo = vec![f64::INFINITY; n];
    let mut t_hi = vec![f64::NEG_INFINITY; n];
    for code in 0..(1u32 << n) {
        let corner: Vec<f64> = (0..n)
            .map(|i| q.corner()[i] + ((code >> i) & 1) as f64 * q.side() - c[i])
            .collect();
        let t = &inv * nalgebra::DVector::from_row_slice(&corner);
        for i in 0..n {
            t_lo[i] = t_lo[i].min(t[i]);
            t_hi[i] = t_hi[i].max(t[i]);
        }
    }

    let lo_idx: Vec<i64> = t_lo.iter().map(|&t| (t / h).floor() as i64 - 1).collect();
    let hi_idx: Vec<i64> = t_hi.iter().map(|&t| (t / h).ceil() as i64 + 1).collect();
    let count: i64 = lo_idx
        .iter()
        .zip(&hi_idx)
        .map(|(&a, &b)| (b - a + 1).max(0))
        .product();
    if count > 20_000_000 {
        return Err(Error::InvalidParameter {
            name: "h",
            reason: format!("{count} candidate nodes exceed the 2e7 budget"),
        });
    }

    let mut out = DiscreteMeasure::new(d);
    let weight = h.powi(n as i32);
    let mut idx = lo_idx.clone();
    'outer: loop {
        let t: Vec<f64> = idx.iter().map(|&m| (m as f64 + 0.5) * h).collect();
        let p = l.point_at(&t);
        if q.vertical_contains(&p) {
            out.push(&p, weight)?;
        }
        for i in 0..n {
            idx[i] += 1;
            if idx[i] <= hi_idx[i] {
                continue 'outer;
            }
            idx[i] = lo_idx[i];
        }
        break;
    }
    if out.is_empty() {
        return Err(Error::NoIntersection(
            "plane misses the vertical cylinder over the cube".into(),
        ));
    }
    Ok(out)
}

/// Flatness of a measure over a graph cube, measured inside the vertical
/// cylinder `V(Q)` instead of a ball.
///
/// Planes at sine-angle above `1 − eps0` against the base plane score
/// exactly 1.  Otherwise the value is
/// `ℓ(Q)^{−(1+n/2)} · W₂(ψ_Q ν, a·ψ_Q 𝐻ⁿ|_L)` with `ψ_Q` the sharp
/// indicator of the cylinder and `a` matching the masses.
pub fn tilde_alpha(
    nu: &DiscreteMeasure,
    q: &GammaCube,
    l_q: &AffinePlane,
    eps0: f64,
    h: f64,
) -> Result<f64> {
    let n = l_q.dim_plane();
    if nu.dim() != l_q.dim_ambient() {
        return Err(Error::DimensionMismatch {
            expected: l_q.dim_ambient(),
            got: nu.dim(),
        });
    }
    if !(eps0 > 0.0 && eps0 < 1.0) {
        return Err(Error::InvalidParameter {
            name: "eps0",
            reason: format!("{eps0} is not in (0, 1)"),
        });
    }
    if base_angle(l_q)? > 1.0 - eps0 {
        return Ok(1.0);
    }

    let mut restricted = DiscreteMeasure::new(nu.dim());
    for (pos, w) in nu.iter() {
        if w > 0.0 && q.vertical_contains(pos) {
            restricted.push(pos, w)?;
        }
    }
    let mass = restricted.total_mass();
    if mass <= 0.0 {
        return Err(Error::UndefinedCoefficient(
            "measure carries no mass in the vertical cylinder over the cube".into(),
        ));
    }
    let flat = vertical_flat_quadrature(q, l_q, eps0, h)?;
    let a = mass / flat.total_mass();
    let transport = exact_wasserstein(&restricted, &flat.scaled(a), 2)?;
    Ok(transport.distance / q.side().powf(1.0 + n as f64 / 2.0))
}

/// Support radius factor for the auxiliary measure, as a multiple of the
/// window ball: cubes of the scale-`2^{−k}` family can sit a `K`-fold
/// inflation away from their footprints, so the factor grows like
/// `K · 2^{k₀}`.
pub fn support_factor_for(k0: u32, k_factor: f64) -> f64 {
    k_factor * 2.0_f64.powi(k0 as i32)
}

/// A localized auxiliary measure with its reweighting coefficients.
#[derive(Debug, Clone)]
pub struct AuxiliaryMeasure {
    measure: DiscreteMeasure,
    coefficients: Vec<(WhitneyCube, f64)>,
    container: ShiftedContainer,
}

impl AuxiliaryMeasure {
    pub fn measure(&self) -> &DiscreteMeasure {
        &self.measure
    }

    pub fn into_measure(self) -> DiscreteMeasure {
        self.measure
    }

    /// Retained Whitney cubes with their coefficients, all in `(0, 1]`.
    pub fn coefficients(&self) -> &[(WhitneyCube, f64)] {
        &self.coefficients
    }

    pub fn container(&self) -> &ShiftedContainer {
        &self.container
    }
}

/// Localize a measure around a graph cube: on-graph atoms are weighted by
/// the cutoff window of the inflated ball `B̃ = Λ·B_Q`, and every Whitney
/// cube `P` of the container's scale family keeps its atoms scaled by
///
///   `a_P = (∫ φ_B̃ g_P dσ) / μ(P) = Σ_{nodes ∈ footprint} φ_B̃·w / ℓ(P)ⁿ`,
///
/// which is 1 when the footprint lies where the window is flat and 0 when
/// the window misses it.  The result's support must stay inside the
/// `support_factor`-fold inflation of `B̃`; a violation reports how far
/// mass escaped instead of silently keeping it.
///
/// The decomposition must use the grid shift of the cube's container —
/// call `find_shifted_container` first to learn it.
pub fn auxiliary_mu_q(
    mu: &DiscreteMeasure,
    graph: &LipschitzGraph,
    q: &GammaCube,
    deco: &WhitneyDecomposition,
    support_factor: f64,
    big_lambda: f64,
    h: f64,
) -> Result<AuxiliaryMeasure> {
    let d = graph.dim_ambient();
    let n = graph.dim_base();
    if mu.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: mu.dim(),
        });
    }
    let container = find_shifted_container(graph, q, big_lambda)?;
    if deco.shift() != container.e.as_slice() {
        return Err(Error::InvalidParameter {
            name: "deco",
            reason: format!(
                "decomposition uses grid shift {:?} but the container needs {:?}",
                deco.shift(),
                container.e
            ),
        });
    }
    let btilde = q.big_ball(big_lambda);
    let family = whitney_filter(deco.cubes(), container.k);
    let sigma = sigma_over(graph, deco, h)?;

    let mut measure = DiscreteMeasure::new(d);
    let mut cube_atoms: Vec<Vec<(Vec<f64>, f64)>> = vec![Vec::new(); family.len()];
    for (pos, w) in mu.iter() {
        if w == 0.0 {
            continue;
        }
        if on_graph(graph, pos) {
            let phi = cutoff_value(&btilde, pos);
            if phi > 0.0 {
                measure.push(pos, phi * w)?;
            }
        } else if let Some(i) = family.iter().position(|c| c.contains(pos)) {
            cube_atoms[i].push((pos.to_vec(), w));
        }
    }

    let mut coefficients = Vec::new();
    for (i, cube) in family.iter().enumerate() {
        if cube_atoms[i].is_empty() {
            continue;
        }
        let base = &cube.corner()[..n];
        let side = cube.side();
        let integral: f64 = (0..sigma.len())
            .filter(|&j| {
                let u = &sigma.position(j)[..n];
                base.iter().zip(u).all(|(&c, &ui)| c <= ui && ui < c + side)
            })
            .map(|j| cutoff_value(&btilde, sigma.position(j)) * sigma.weight(j))
            .sum();
        // Clamp against quadrature round-off; real overshoot is impossible
        // since φ ≤ 1 and the footprint weights tile at most ℓ(P)ⁿ.
        let a = (integral / side.powi(n as i32)).min(1.0);
        if a > 0.0 {
            for (pos, w) in &cube_atoms[i] {
                measure.push(pos, a * w)?;
            }
            coefficients.push((cube.clone(), a));
        }
    }

    let reach = support_factor * btilde.radius();
    for (pos, _) in measure.iter() {
        let gap = dist(pos, btilde.center());
        if gap > reach * (1.0 + 1e-12) {
            return Err(Error::SupportEscapes(format!(
                "atom at distance {gap:.6} exceeds the support radius {reach:.6}; \
                 raise the support factor to at least {:.3}",
                gap / btilde.radius()
            )));
        }
    }

    Ok(AuxiliaryMeasure {
        measure,
        coefficients,
        container,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LAMBDA;
    use crate::whitney::{build_whitney, WhitneyConfig};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat_deco(min_side: f64) -> (LipschitzGraph, WhitneyDecomposition) {
        let g = LipschitzGraph::flat(1, 2).unwrap();
        let cfg = WhitneyConfig {
            min_side,
            ..WhitneyConfig::default()
        };
        let deco = build_whitney(&g, &[-1.0, -1.0], 2.0, &[0], &cfg).unwrap();
        (g, deco)
    }

    #[test]
    fn point_mass_spreads_uniformly_over_its_footprint() {
        let (g, deco) = flat_deco(0.5_f64.powi(5));
        // An accepted cube at sidelength 1/8 well above the axis.
        let cube = deco
            .cubes()
            .iter()
            .find(|c| !c.is_truncated() && c.side() == 0.125 && c.corner()[1] > 0.0)
            .unwrap()
            .clone();
        let mut mu = DiscreteMeasure::new(2);
        mu.push(&cube.center(), 0.7).unwrap();

        // Aligned spacing: 64 cells over the box, 4 inside the footprint.
        let out = approx_measure(&mu, &g, &deco, 3, 2.0 / 64.0).unwrap();
        assert_eq!(out.graph_atoms(), 0);
        assert_eq!(out.measure().len(), 4);
        for (pos, w) in out.measure().iter() {
            assert_eq!(w, 0.7 / 4.0);
            assert_eq!(pos[1], 0.0);
            assert!(pos[0] >= cube.corner()[0] && pos[0] < cube.corner()[0] + 0.125);
        }
        assert_eq!(out.densities().len(), 1);
        let d = &out.densities()[0];
        assert_eq!(d.mass(), 0.7);
        assert_eq!(d.density(), 0.7 / 0.125);
        assert!(!d.fallback());
        assert_eq!(d.node_indices(), &[0, 1, 2, 3]);
    }

    #[test]
    fn on_graph_measures_pass_through_unchanged() {
        let g = LipschitzGraph::new(1, 2, 0.8, |u| vec![0.8 * u[0].sin()]).unwrap();
        let cfg = WhitneyConfig {
            min_side: 0.5_f64.powi(5),
            ..WhitneyConfig::default()
        };
        let deco = build_whitney(&g, &[-1.0, -1.0], 2.0, &[0], &cfg).unwrap();
        let mu = sigma_quadrature(&g, &[-0.9], &[0.9], 0.05).unwrap();
        for k in [0, 3, 6] {
            let out = approx_measure(&mu, &g, &deco, k, 0.125).unwrap();
            assert_eq!(out.graph_atoms(), mu.len());
            assert!(out.densities().is_empty());
            assert_eq!(out.dropped_mass(), 0.0);
            assert_eq!(out.measure().len(), mu.len());
            for (i, (pos, w)) in out.measure().iter().enumerate() {
                assert_eq!(pos, mu.position(i));
                assert_eq!(w, mu.weight(i));
            }
        }
    }

    #[test]
    fn mass_is_conserved_and_monotone_in_the_scale_filter() {
        let (g, deco) = flat_deco(0.5_f64.powi(6));
        let mut rng = ChaCha8Rng::seed_from_u64(0x41);
        let mut mu = DiscreteMeasure::new(2);
        for _ in 0..120 {
            // Heights spanning several Whitney levels, plus strays outside.
            let x = rng.gen_range(-0.95..0.95);
            let y = rng.gen_range(-0.9..0.9);
            mu.push(&[x, y], rng.gen_range(0.1..1.0)).unwrap();
        }
        for x in [-0.7, 0.1, 0.6] {
            mu.push(&[x, 0.0], 0.5).unwrap();
        }
        mu.push(&[3.0, 3.0], 2.0).unwrap();

        let mut previous = f64::INFINITY;
        for k in [1, 2, 3, 4] {
            let out = approx_measure(&mu, &g, &deco, k, 2.0 / 256.0).unwrap();
            // Independent audit: classify atoms directly.
            let family = whitney_filter(deco.cubes(), k);
            let mut expected = 0.0;
            for (pos, w) in mu.iter() {
                if pos[1] == 0.0 {
                    expected += w;
                } else if family.iter().any(|c| c.contains(pos)) {
                    expected += w;
                }
            }
            let total = out.measure().total_mass();
            assert!(
                (total - expected).abs() <= 1e-12 * expected,
                "k={k}: total {total} vs expected {expected}"
            );
            let projected = out.projected_mass();
            assert!(
                projected <= previous + 1e-12,
                "projected mass grew from {previous} to {projected} at k={k}"
            );
            previous = projected;
        }
    }

    #[test]
    fn empty_footprints_fall_back_to_the_nearest_node() {
        let (g, deco) = flat_deco(0.5_f64.powi(5));
        // Coarse surface grid: node bases at ±0.25, ±0.75 only.
        let cube = deco
            .cubes()
            .iter()
            .find(|c| {
                !c.is_truncated()
                    && c.side() == 0.0625
                    && c.corner()[0] == 0.5
                    && c.corner()[1] == 0.4375
            })
            .unwrap()
            .clone();
        let mut mu = DiscreteMeasure::new(2);
        mu.push(&cube.center(), 0.3).unwrap();
        let out = approx_measure(&mu, &g, &deco, 4, 0.5).unwrap();
        assert_eq!(out.fallback_count(), 1);
        assert!(out.densities()[0].fallback());
        assert_eq!(out.measure().len(), 1);
        let (pos, w) = out.measure().iter().next().unwrap();
        assert_eq!(w, 0.3);
        assert_eq!(pos, &[0.75, 0.0]);
    }

    #[test]
    fn projected_integrals_match_cube_masses() {
        let g = LipschitzGraph::new(1, 2, 0.6, |u| vec![0.3 * (2.0 * u[0]).cos()]).unwrap();
        let cfg = WhitneyConfig {
            min_side: 0.5_f64.powi(6),
            ..WhitneyConfig::default()
        };
        let deco = build_whitney(&g, &[-1.0, -1.0], 2.0, &[0], &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0x43);
        let mut mu = DiscreteMeasure::new(2);
        for _ in 0..60 {
            mu.push(
                &[rng.gen_range(-0.9..0.9), rng.gen_range(0.45..0.9)],
                rng.gen_range(0.2..1.0),
            )
            .unwrap();
        }
        let h = 2.0 / 512.0;
        let out = approx_measure(&mu, &g, &deco, 2, h).unwrap();
        assert!(!out.densities().is_empty());
        // Oracle: recompute the surface mass of each footprint directly.
        let sigma = sigma_quadrature(&g, &[-1.0], &[1.0], h).unwrap();
        for density in out.densities() {
            let (base, side) = density.footprint(1);
            let footprint_mass: f64 = (0..sigma.len())
                .filter(|&j| {
                    let u = sigma.position(j)[0];
                    base[0] <= u && u < base[0] + side
                })
                .map(|j| sigma.weight(j))
                .sum();
            let integral = density.density() * footprint_mass;
            assert!(
                (integral - density.mass()).abs() <= 1e-9 * density.mass(),
                "cube at {base:?}: integral {integral} vs mass {}",
                density.mass()
            );
        }
    }

    fn unit_cube_on_flat_graph() -> (LipschitzGraph, GammaCube) {
        let g = LipschitzGraph::flat(1, 2).unwrap();
        let q = GammaCube::new(&g, vec![0.0], 0.25, vec![0]).unwrap();
        (g, q)
    }

    #[test]
    fn steep_planes_score_exactly_one() {
        let (_, q) = unit_cube_on_flat_graph();
        let vertical = AffinePlane::new(q.z().to_vec(), &[vec![0.0, 1.0]]).unwrap();
        let nu = DiscreteMeasure::from_rows(2, vec![(vec![0.1, 0.0], 1.0)]).unwrap();
        assert_eq!(tilde_alpha(&nu, &q, &vertical, 0.1, 0.01).unwrap(), 1.0);
        // The flat quadrature refuses the same plane outright.
        assert!(matches!(
            vertical_flat_quadrature(&q, &vertical, 0.1, 0.01),
            Err(Error::DegenerateFrame(_))
        ));
    }

    #[test]
    fn vanishes_on_its_own_flat_sample() {
        let (_, q) = unit_cube_on_flat_graph();
        let l = AffinePlane::new(q.z().to_vec(), &[vec![1.0, 0.0]]).unwrap();
        let h = 0.25 / 32.0;
        let nu = vertical_flat_quadrature(&q, &l, 0.1, h).unwrap();
        assert_eq!(nu.len(), 32);
        let value = tilde_alpha(&nu, &q, &l, 0.1, h).unwrap();
        assert!(value <= 1e-12, "{value}");
    }

    #[test]
    fn orthogonal_shift_scales_like_the_offset() {
        let (_, q) = unit_cube_on_flat_graph();
        let l = AffinePlane::new(q.z().to_vec(), &[vec![1.0, 0.0]]).unwrap();
        let h = 0.25 / 32.0;
        let flat = vertical_flat_quadrature(&q, &l, 0.1, h).unwrap();
        for t in [0.002, 0.01, 0.05] {
            let nu = flat.translated(&[0.0, t]).unwrap();
            let value = tilde_alpha(&nu, &q, &l, 0.1, h).unwrap();
            // Closed form: a pure translation moves every atom by t, so
            // W₂ = t·√mass and the value is t·√mass / ℓ^{3/2}.
            let expected = t * flat.total_mass().sqrt() / 0.25_f64.powf(1.5);
            assert!(
                (value - expected).abs() <= 1e-10 * expected,
                "t={t}: {value} vs {expected}"
            );
        }
    }

    #[test]
    fn doubling_the_measure_scales_the_value_by_sqrt_two() {
        let (_, q) = unit_cube_on_flat_graph();
        let l = AffinePlane::new(q.z().to_vec(), &[vec![1.0, 0.0]]).unwrap();
        let h = 0.25 / 16.0;
        let nu = vertical_flat_quadrature(&q, &l, 0.1, h)
            .unwrap()
            .translated(&[0.0, 0.01])
            .unwrap();
        let base = tilde_alpha(&nu, &q, &l, 0.1, h).unwrap();
        let scaled = tilde_alpha(&nu.scaled(4.0), &q, &l, 0.1, h).unwrap();
        // Power-of-two mass scaling commutes with rounding bit for bit.
        assert_eq!(scaled, 2.0 * base);
    }

    #[test]
    fn empty_cylinder_is_an_error() {
        let (_, q) = unit_cube_on_flat_graph();
        let l = AffinePlane::new(q.z().to_vec(), &[vec![1.0, 0.0]]).unwrap();
        let nu = DiscreteMeasure::from_rows(2, vec![(vec![0.7, 0.0], 1.0)]).unwrap();
        assert!(matches!(
            tilde_alpha(&nu, &q, &l, 0.1, 0.01),
            Err(Error::UndefinedCoefficient(_))
        ));
    }

    #[test]
    fn the_steepness_threshold_is_configurable() {
        let (_, q) = unit_cube_on_flat_graph();
        // Sine-angle exactly 0.6 against the base plane.
        let tilted = AffinePlane::new(q.z().to_vec(), &[vec![0.8, 0.6]]).unwrap();
        assert!((base_angle(&tilted).unwrap() - 0.6).abs() <= 1e-12);
        let nu = vertical_flat_quadrature(&q, &tilted, 0.3, 0.25 / 64.0).unwrap();
        // Threshold 1 − 0.5 = 0.5 < 0.6: the branch fires.
        assert_eq!(tilde_alpha(&nu, &q, &tilted, 0.5, 0.25 / 64.0).unwrap(), 1.0);
        // Threshold 1 − 0.3 = 0.7 > 0.6: the transport branch runs.
        let value = tilde_alpha(&nu, &q, &tilted, 0.3, 0.25 / 64.0).unwrap();
        assert!(value < 1e-12, "own sample should still score zero: {value}");
    }

    #[test]
    fn auxiliary_measure_agrees_with_the_source_near_the_cube() {
        let g = LipschitzGraph::flat(1, 2).unwrap();
        let q = GammaCube::new(&g, vec![0.0], 0.5_f64.powi(12), vec![0]).unwrap();
        let container = find_shifted_container(&g, &q, LAMBDA).unwrap();
        assert_eq!(container.e, vec![1]);
        assert_eq!(container.k, 2);

        let cfg = WhitneyConfig {
            min_side: 0.5_f64.powi(13),
            ..WhitneyConfig::default()
        };
        let deco = build_whitney(&g, &[-0.5, -0.125], 0.25, &[1], &cfg).unwrap();
        let h = 0.25 / 4096.0;

        let r3 = q.ball().scaled(3.0);
        let mut mu = DiscreteMeasure::new(2);
        // On-graph atoms: inside 3B_Q, mid-range, and far outside the window.
        for x in [-1e-3, 5e-4, 0.5_f64.powi(13)] {
            mu.push(&[x, 0.0], 0.4).unwrap();
        }
        mu.push(&[0.015, 0.0], 0.6).unwrap();
        mu.push(&[0.07, 0.0], 1.0).unwrap();
        // Off-graph atoms: one close enough to sit inside 3B_Q, one whose
        // footprint the window misses entirely.
        mu.push(&[3e-4, 1e-3], 0.8).unwrap();
        mu.push(&[0.04, 0.06], 0.9).unwrap();
        assert!(r3.contains(&[3e-4, 1e-3]));
        assert!(!r3.contains(&[0.015, 0.0]));

        let support = support_factor_for(container.k0, 40.0);
        let aux = auxiliary_mu_q(&mu, &g, &q, &deco, support, LAMBDA, h).unwrap();

        // Every coefficient lies in (0, 1]; the near cube's is exactly 1.
        assert!(!aux.coefficients().is_empty());
        for (_, a) in aux.coefficients() {
            assert!(*a > 0.0 && *a <= 1.0);
        }
        assert!(aux
            .coefficients()
            .iter()
            .any(|(c, a)| c.contains(&[3e-4, 1e-3]) && *a == 1.0));
        // The distant cube's footprint misses the window: excluded.
        assert!(!aux.coefficients().iter().any(|(c, _)| c.contains(&[0.04, 0.06])));
        let total: f64 = aux.measure().iter().map(|(_, w)| w).sum();
        assert!(total < mu.total_mass());

        // Restrictions to 3B_Q agree atom for atom, bit for bit.
        let collect = |m: &DiscreteMeasure| -> Vec<(Vec<f64>, f64)> {
            let mut rows: Vec<(Vec<f64>, f64)> = m
                .iter()
                .filter(|(pos, _)| r3.contains(pos))
                .map(|(pos, w)| (pos.to_vec(), w))
                .collect();
            rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            rows
        };
        let lhs = collect(&mu);
        let rhs = collect(aux.measure());
        assert_eq!(lhs.len(), 4);
        assert_eq!(lhs, rhs);

        // A support factor of 1 cannot hold the retained mid-range atom.
        assert!(matches!(
            auxiliary_mu_q(&mu, &g, &q, &deco, 1.0, LAMBDA, h),
            Err(Error::SupportEscapes(_))
        ));

        // Mismatched grid shift is refused up front.
        let wrong = build_whitney(&g, &[-0.5, -0.125], 0.25, &[0], &cfg).unwrap();
        assert!(matches!(
            auxiliary_mu_q(&mu, &g, &q, &wrong, support, LAMBDA, h),
            Err(Error::InvalidParameter { name: "deco", .. })
        ));
    }

    #[test]
    fn provenance_dump_lists_cubes_and_nodes() {
        let (g, deco) = flat_deco(0.5_f64.powi(5));
        let mut mu = DiscreteMeasure::new(2);
        mu.push(&[0.1, 0.5], 1.0).unwrap();
        mu.push(&[0.3, 0.0], 0.5).unwrap();
        let out = approx_measure(&mu, &g, &deco, 1, 2.0 / 64.0).unwrap();
        let dump = out.to_json_value();
        assert_eq!(dump["graph_atoms"], 1);
        assert_eq!(dump["cubes"].as_array().unwrap().len(), out.densities().len());
        assert!(dump["measure"]["atoms"].is_array() || dump["measure"].is_object());
    }
}
