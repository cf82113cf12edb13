//! Whitney decomposition of a box minus a Lipschitz graph.
//!
//! The complement of a graph `Γ` is tiled by half-open dyadic cubes from a
//! (possibly `e/3`-translated) grid in `R^d`, each kept maximal subject to
//! the clearance rule `dist(Q, Γ) ≥ 4.5·diam(Q)`.  The factor 4.5 is what
//! the tenfold inflation needs: a corner of `10Q` sits `4.5·diam(Q)` from
//! `Q`, so the rule guarantees `10Q ∩ Γ = ∅` with nothing to spare, while
//! the rejected parent bounds `dist(Q, Γ) ≲ 11·diam(Q)` from above, keeping
//! every cube within a `K`-fold inflation of the graph.
//!
//! Distances to the graph are certified, not guessed: a branch-and-bound
//! over the base plane (the graph point over `u` moves at most
//! `√(1+lip²)·|Δu|`, so boxes of base points carry rigorous lower bounds)
//! shrinks an interval `[lo, hi]` around `dist(Q, Γ)` until it is narrower
//! than 1% of the sidelength.  Subdivision stops at a configurable floor;
//! floor cubes still too close to the graph are kept but tagged truncated,
//! and the quantitative properties are asserted for untruncated cubes only.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::graph::LipschitzGraph;

/// Clearance factor: a cube is accepted once `dist(Q,Γ) ≥ 4.5·diam(Q)`.
const CLEARANCE: f64 = 4.5;

/// Tuning for the decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitneyConfig {
    /// Inflation `K` for the contact property `KQ ∩ Γ ≠ ∅` (validation
    /// only; the construction itself guarantees it for any `K ≥ 12`).
    pub k_factor: f64,
    /// Subdivision floor: cubes are never split below this sidelength.
    pub min_side: f64,
}

impl Default for WhitneyConfig {
    fn default() -> Self {
        WhitneyConfig {
            k_factor: 40.0,
            min_side: 0.5_f64.powi(16),
        }
    }
}

/// One cube of the decomposition, with its certified distance interval.
#[derive(Debug, Clone)]
pub struct WhitneyCube {
    corner: Vec<f64>,
    side: f64,
    shift: Vec<u8>,
    dist_lo: f64,
    dist_hi: f64,
    truncated: bool,
}

impl WhitneyCube {
    pub fn corner(&self) -> &[f64] {
        &self.corner
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn shift(&self) -> &[u8] {
        &self.shift
    }

    pub fn diam(&self) -> f64 {
        self.side * (self.corner.len() as f64).sqrt()
    }

    /// Certified lower bound for `dist(Q, Γ)`.
    pub fn dist_lo(&self) -> f64 {
        self.dist_lo
    }

    /// Certified upper bound for `dist(Q, Γ)`.
    pub fn dist_hi(&self) -> f64 {
        self.dist_hi
    }

    /// Whether subdivision stopped at the floor instead of the clearance
    /// rule; truncated cubes are exempt from the quantitative properties.
    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    pub fn center(&self) -> Vec<f64> {
        self.corner.iter().map(|&c| c + self.side / 2.0).collect()
    }

    /// Half-open membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.corner.len()
            && self
                .corner
                .iter()
                .zip(x)
                .all(|(&c, &xi)| c <= xi && xi < c + self.side)
    }

    /// Distance from a point to the closed cube.
    pub fn dist_to_point(&self, x: &[f64]) -> f64 {
        box_distance(&self.corner, self.side, x)
    }

    /// Closed membership in the concentric `factor`-fold inflation.
    pub fn inflated_contains(&self, x: &[f64], factor: f64) -> bool {
        let half = factor * self.side / 2.0;
        x.len() == self.corner.len()
            && self
                .corner
                .iter()
                .zip(x)
                .all(|(&c, &xi)| (xi - (c + self.side / 2.0)).abs() <= half)
    }

    /// Whether two closed inflations intersect (axis boxes, exact).
    fn inflations_intersect(&self, other: &WhitneyCube, factor: f64) -> bool {
        let ha = factor * self.side / 2.0;
        let hb = factor * other.side / 2.0;
        (0..self.corner.len()).all(|i| {
            let ca = self.corner[i] + self.side / 2.0;
            let cb = other.corner[i] + other.side / 2.0;
            (ca - cb).abs() <= ha + hb
        })
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "corner": self.corner,
            "side": self.side,
            "shift": self.shift,
            "dist": self.dist_lo,
            "dist_hi": self.dist_hi,
            "truncated": self.truncated,
        })
    }
}

/// A full decomposition of one box against one graph.
#[derive(Debug, Clone)]
pub struct WhitneyDecomposition {
    shift: Vec<u8>,
    root_corner: Vec<f64>,
    root_side: f64,
    cubes: Vec<WhitneyCube>,
}

impl WhitneyDecomposition {
    pub fn cubes(&self) -> &[WhitneyCube] {
        &self.cubes
    }

    pub fn shift(&self) -> &[u8] {
        &self.shift
    }

    pub fn root_corner(&self) -> &[f64] {
        &self.root_corner
    }

    pub fn root_side(&self) -> f64 {
        self.root_side
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "shift": self.shift,
            "root_corner": self.root_corner,
            "root_side": self.root_side,
            "cubes": self.cubes.iter().map(|c| c.to_json_value()).collect::<Vec<_>>(),
        })
    }
}

/// Distance from a point to a closed axis box.
pub(crate) fn box_distance(corner: &[f64], side: f64, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&c, &xi) in corner.iter().zip(x) {
        let gap = (c - xi).max(xi - (c + side)).max(0.0);
        acc += gap * gap;
    }
    acc.sqrt()
}

/// Search node for the distance bound: a box of base points with a lower
/// bound for the objective over it.  Ordered as a min-heap on the bound.
struct SearchNode {
    lb: f64,
    center: Vec<f64>,
    half: Vec<f64>,
}

impl PartialEq for SearchNode {
    fn eq(&self, other: &Self) -> bool {
        self.lb == other.lb
    }
}
impl Eq for SearchNode {}
impl PartialOrd for SearchNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for SearchNode {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want the smallest bound.
        other.lb.total_cmp(&self.lb)
    }
}

/// Certified interval around `dist(cube, Γ)`, with `hi − lo ≤ tol` unless
/// the evaluation budget runs out (the interval stays valid either way).
///
/// The objective `f(u) = dist((u, A(u)), cube)` is `√(1+lip²)`-Lipschitz,
/// and its minimizer lies within `f(u₀)` of the cube's base footprint
/// (outside it the horizontal gap alone exceeds `f(u₀)`), so the search
/// region is finite and every box of base points carries the rigorous bound
/// `f(center) − √(1+lip²)·radius`.
fn graph_distance_interval(
    graph: &LipschitzGraph,
    corner: &[f64],
    side: f64,
    tol: f64,
) -> (f64, f64) {
    let n = graph.dim_base();
    let slope = (1.0 + graph.lipschitz_bound().powi(2)).sqrt();
    let f = |u: &[f64]| box_distance(corner, side, &graph.lift(u));

    let u0: Vec<f64> = corner[..n].iter().map(|&c| c + side / 2.0).collect();
    let f0 = f(&u0);
    if f0 == 0.0 {
        return (0.0, 0.0);
    }
    let center = u0;
    let half: Vec<f64> = (0..n).map(|_| side / 2.0 + f0).collect();
    let radius = half.iter().map(|h| h * h).sum::<f64>().sqrt();

    let mut best = f0;
    let mut heap = BinaryHeap::new();
    heap.push(SearchNode {
        lb: (f0 - slope * radius).max(0.0),
        center,
        half,
    });
    let mut evals = 1usize;
    while let Some(node) = heap.pop() {
        if node.lb >= best - tol || evals >= 20_000 {
            let floor = heap
                .iter()
                .map(|m| m.lb)
                .fold(node.lb, f64::min)
                .max(0.0);
            return (floor.min(best), best);
        }
        // Split the widest axis in half and bound both children.
        let (axis, _) = node
            .half
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty dimensions");
        for sign in [-1.0, 1.0] {
            let mut c = node.center.clone();
            let mut h = node.half.clone();
            h[axis] = node.half[axis] / 2.0;
            c[axis] += sign * h[axis];
            let val = f(&c);
            evals += 1;
            best = best.min(val);
            let radius = h.iter().map(|x| x * x).sum::<f64>().sqrt();
            let lb = (val - slope * radius).max(0.0);
            if lb < best {
                heap.push(SearchNode { lb, center: c, half: h });
            }
        }
    }
    (best, best)
}

/// Decompose `root ∖ Γ` into Whitney cubes from the `e/3`-translated dyadic
/// grid.  The root corner is given pre-shift, as for lattices: the actual
/// box is translated by `(e/3, 0, …, 0)`.
pub fn build_whitney(
    graph: &LipschitzGraph,
    root_corner: &[f64],
    root_side: f64,
    shift: &[u8],
    cfg: &WhitneyConfig,
) -> Result<WhitneyDecomposition> {
    let d = graph.dim_ambient();
    let n = graph.dim_base();
    if root_corner.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: root_corner.len(),
        });
    }
    if shift.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: shift.len(),
        });
    }
    if shift.iter().any(|&b| b > 1) {
        return Err(Error::InvalidParameter {
            name: "shift",
            reason: "shift entries must be 0 or 1".into(),
        });
    }
    if !(root_side.is_finite() && root_side > 0.0) {
        return Err(Error::InvalidParameter {
            name: "root_side",
            reason: format!("{root_side} is not a positive sidelength"),
        });
    }
    if !(cfg.min_side > 0.0 && cfg.min_side <= root_side) {
        return Err(Error::InvalidParameter {
            name: "min_side",
            reason: format!(
                "floor {} must lie in (0, root_side = {root_side}]",
                cfg.min_side
            ),
        });
    }

    let origin: Vec<f64> = root_corner
        .iter()
        .enumerate()
        .map(|(i, &c)| if i < n { c + shift[i] as f64 / 3.0 } else { c })
        .collect();
    let sqrt_d = (d as f64).sqrt();

    let mut cubes = Vec::new();
    let mut stack: Vec<(Vec<f64>, f64)> = vec![(origin, root_side)];
    while let Some((corner, side)) = stack.pop() {
        if cubes.len() >= 1 << 22 {
            return Err(Error::InvalidParameter {
                name: "min_side",
                reason: "decomposition exceeds 2^22 cubes; raise the floor".into(),
            });
        }
        let (lo, hi) = graph_distance_interval(graph, &corner, side, side / 100.0);
        let diam = side * sqrt_d;
        if lo >= CLEARANCE * diam {
            cubes.push(WhitneyCube {
                corner,
                side,
                shift: shift.to_vec(),
                dist_lo: lo,
                dist_hi: hi,
                truncated: false,
            });
        } else if side / 2.0 < cfg.min_side {
            cubes.push(WhitneyCube {
                corner,
                side,
                shift: shift.to_vec(),
                dist_lo: lo,
                dist_hi: hi,
                truncated: true,
            });
        } else {
            let half = side / 2.0;
            for code in 0..(1u32 << d) {
                let child: Vec<f64> = corner
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| c + ((code >> i) & 1) as f64 * half)
                    .collect();
                stack.push((child, half));
            }
        }
    }
    // Stack order is exploration order; sort for a stable, readable layout.
    cubes.sort_by(|a, b| {
        b.side
            .total_cmp(&a.side)
            .then_with(|| a.corner.iter().partial_cmp(b.corner.iter()).unwrap())
    });
    Ok(WhitneyDecomposition {
        shift: shift.to_vec(),
        root_corner: root_corner.to_vec(),
        root_side,
        cubes,
    })
}

/// The sub-family of cubes with sidelength at most `2^{−k}`, order kept.
pub fn whitney_filter(cubes: &[WhitneyCube], k: i32) -> Vec<WhitneyCube> {
    let cap = 2.0_f64.powi(-k) * (1.0 + 1e-12);
    cubes.iter().filter(|c| c.side <= cap).cloned().collect()
}

/// Validation report: per-property failure counts and worst-case ratios.
#[derive(Debug, Clone)]
pub struct WhitneyReport {
    pub cubes: usize,
    pub truncated: usize,
    /// Untruncated cubes whose 10-fold inflation caught a graph sample.
    pub clearance_failures: usize,
    /// Untruncated cubes whose `K`-fold inflation missed the graph.
    pub contact_failures: usize,
    /// Violations of the ball property over random graph balls.
    pub ball_failures: usize,
    /// Largest number of cubes sharing a 10-fold inflation with one cube.
    pub max_neighbors: usize,
    /// Largest sidelength ratio among such neighbor pairs.
    pub max_neighbor_ratio: f64,
    /// Smallest `dist_lo/diam` over untruncated cubes (should be ≥ 4.5).
    pub min_clearance_ratio: f64,
    /// Largest `dist_hi/diam` over untruncated cubes (should be ≤ `K`).
    pub max_contact_ratio: f64,
}

impl WhitneyReport {
    pub fn all_pass(&self, k_factor: f64) -> bool {
        self.clearance_failures == 0
            && self.contact_failures == 0
            && self.ball_failures == 0
            && self.min_clearance_ratio >= CLEARANCE
            && self.max_contact_ratio <= k_factor
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "cubes": self.cubes,
            "truncated": self.truncated,
            "clearance_failures": self.clearance_failures,
            "contact_failures": self.contact_failures,
            "ball_failures": self.ball_failures,
            "max_neighbors": self.max_neighbors,
            "max_neighbor_ratio": self.max_neighbor_ratio,
            "min_clearance_ratio": self.min_clearance_ratio,
            "max_contact_ratio": self.max_contact_ratio,
        })
    }
}

/// Audit a decomposition against the graph it was built from.
///
/// Clearance and contact are checked by sampling the graph over the base
/// footprint of the inflated cube — an evaluation-only oracle, independent
/// of the certified interval used during construction.  The ball property
/// draws random graph-centered balls and asserts that every untruncated
/// cube meeting `B(y, r)` has `diam ≤ r` and sits inside `B(y, 3r)`.
pub fn validate_whitney(deco: &WhitneyDecomposition, graph: &LipschitzGraph) -> WhitneyReport {
    let n = graph.dim_base();
    let cubes = deco.cubes();
    let mut report = WhitneyReport {
        cubes: cubes.len(),
        truncated: cubes.iter().filter(|c| c.truncated).count(),
        clearance_failures: 0,
        contact_failures: 0,
        ball_failures: 0,
        max_neighbors: 0,
        max_neighbor_ratio: 1.0,
        min_clearance_ratio: f64::INFINITY,
        max_contact_ratio: 0.0,
    };

    let grid_per_axis = |k: usize| -> usize {
        match n {
            1 => k,
            2 => (k as f64).sqrt().ceil() as usize,
            _ => ((k as f64).powf(1.0 / n as f64)).ceil() as usize + 1,
        }
    };

    // Graph samples over the base footprint of a factor-inflated cube.
    let scan_inflation = |cube: &WhitneyCube, factor: f64, hits_wanted: bool| -> bool {
        let k = grid_per_axis(64);
        let center = cube.center();
        let half = factor * cube.side / 2.0;
        let mut index = vec![0usize; n];
        let count = k.pow(n as u32);
        let mut u = vec![0.0; n];
        let mut hit = false;
        for flat in 0..count {
            let mut rem = flat;
            for slot in index.iter_mut() {
                *slot = rem % k;
                rem /= k;
            }
            for i in 0..n {
                u[i] = center[i] - half + 2.0 * half * (index[i] as f64 + 0.5) / k as f64;
            }
            if cube.inflated_contains(&graph.lift(&u), factor) {
                hit = true;
                break;
            }
        }
        hit == hits_wanted
    };

    for cube in cubes.iter().filter(|c| !c.truncated) {
        let diam = cube.diam();
        report.min_clearance_ratio = report.min_clearance_ratio.min(cube.dist_lo / diam);
        report.max_contact_ratio = report.max_contact_ratio.max(cube.dist_hi / diam);
        if !scan_inflation(cube, 10.0, false) {
            report.clearance_failures += 1;
        }
        if !scan_inflation(cube, 40.0, true) {
            report.contact_failures += 1;
        }
    }

    // Exhaustive neighbor scan among untruncated cubes: pairs whose
    // 10-fold inflations intersect must have comparable sidelengths, and
    // each cube may have only boundedly many such neighbors.  Floor cubes
    // are excluded — their size is an artifact of truncation, not of the
    // distance to the graph.
    let untruncated: Vec<&WhitneyCube> = cubes.iter().filter(|c| !c.truncated).collect();
    for (i, a) in untruncated.iter().enumerate() {
        let mut count = 0;
        for (j, b) in untruncated.iter().enumerate() {
            if i != j && a.inflations_intersect(b, 10.0) {
                count += 1;
                let (lo, hi) = if a.side <= b.side {
                    (a.side, b.side)
                } else {
                    (b.side, a.side)
                };
                report.max_neighbor_ratio = report.max_neighbor_ratio.max(hi / lo);
            }
        }
        report.max_neighbors = report.max_neighbors.max(count);
    }

    // Ball property on random graph-centered balls.
    let mut rng = ChaCha8Rng::seed_from_u64(0x3b11);
    for _ in 0..1000 {
        let u: Vec<f64> = (0..n)
            .map(|i| {
                let lo = deco.root_corner()[i];
                rng.gen_range(lo..lo + deco.root_side())
            })
            .collect();
        let y = graph.lift(&u);
        let r = deco.root_side() * rng.gen_range(0.01..0.5);
        for cube in cubes.iter().filter(|c| !c.truncated) {
            if cube.dist_to_point(&y) < r {
                let escapes = cube
                    .corner
                    .iter()
                    .enumerate()
                    .any(|(i, &c)| {
                        let lo = c;
                        let hi = c + cube.side;
                        // Farthest corner coordinate from y along axis i.
                        let far = if (lo - y[i]).abs() > (hi - y[i]).abs() {
                            lo
                        } else {
                            hi
                        };
                        (far - y[i]).abs() > 3.0 * r
                    });
                if cube.diam() > r || escapes {
                    report.ball_failures += 1;
                }
            }
        }
    }
    report
}
