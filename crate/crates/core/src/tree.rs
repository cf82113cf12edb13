//! Stopping-time trees over graph lattices and their martingale calculus.
//!
//! Descent through a (possibly `e/3`-translated) lattice of graph cubes is
//! pruned by three density conditions.  A cube stops when its inflated ball
//! `λ·B̃_Q` carries more than `M·ℓ(Q)ⁿ` of the ambient measure or of the
//! graph-side approximation (high density), or when the cube itself carries
//! less than `M⁻¹·ℓ(Q)ⁿ` (low density).  Surviving cubes form a
//! *semicoherent* tree per shifted grid — the root is a member, and the
//! parent of every member is a member — and the per-shift trees merge into a
//! combined tree on the unshifted grid: a base cube survives when every
//! shift contributes a surviving cube of the same sidelength touching it.
//!
//! On the quadrature of the surface measure `σ`, the martingale difference
//! of a value vector against a cube replaces each value by its child-cell
//! average minus the parent average; the squared norms of these differences
//! are the natural summands of the packing diagnostics.  [`stop_mass`],
//! [`packing_sum`] and [`sweep_m`] report how much measure the stopping
//! region swallows, how the per-level packing subtotals grow, and which
//! threshold `M` from a candidate list first tames the stopping region —
//! the threshold is always chosen by sweep and reported, never assumed.

use std::collections::HashSet;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::graph::{build_lattice, GammaCube, LipschitzGraph, LAMBDA};
use crate::measure::DiscreteMeasure;

/// Knobs of the stopping construction: the density window `[M⁻¹ℓⁿ, Mℓⁿ]`,
/// the extra inflation `λ` applied to `B̃_Q` (the lemma behind the
/// construction needs `λ > 3`), and the stop-mass target `ε` used by the
/// threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeThresholds {
    pub m: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl TreeThresholds {
    fn validate(&self) -> Result<()> {
        if !(self.m.is_finite() && self.m > 1.0) {
            return Err(Error::InvalidParameter {
                name: "m",
                reason: format!(
                    "{} cannot bound a density window [M⁻¹ℓⁿ, Mℓⁿ]; need M > 1",
                    self.m
                ),
            });
        }
        if !(self.lambda.is_finite() && self.lambda > 3.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("{} is not > 3", self.lambda),
            });
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                reason: format!("{} is not in (0, 1)", self.epsilon),
            });
        }
        Ok(())
    }

    fn to_json_value(self) -> Value {
        json!({ "m": self.m, "lambda": self.lambda, "epsilon": self.epsilon })
    }
}

/// Mass a measure gives to the vertical slab `V(Q)` over the cube's base
/// box.  For measures carried by the graph — the only ones the stopping
/// construction feeds the low-density check — this is exactly the mass of
/// the graph patch over the cube, decided atom by atom through the
/// half-open base box with no tolerance.
pub fn cube_mass(mu: &DiscreteMeasure, q: &GammaCube) -> f64 {
    mu.iter()
        .filter(|(x, _)| q.vertical_contains(x))
        .map(|(_, w)| w)
        .sum()
}

/// The martingale difference of a value vector against one cube: on each
/// child cell the difference between the child average and the parent
/// average, zero outside the cube.  Children are indexed by corner offsets
/// with axis 0 as the least significant bit.
#[derive(Debug, Clone)]
pub struct MartingaleCoefficient {
    cube: GammaCube,
    deviations: Vec<f64>,
    child_masses: Vec<f64>,
    norm_sq: f64,
}

impl MartingaleCoefficient {
    pub fn cube(&self) -> &GammaCube {
        &self.cube
    }

    /// Child average minus parent average, one entry per child cell.  A
    /// child holding no quadrature node keeps deviation 0 and mass 0, so it
    /// drops out of both the mean-zero identity and the norm.
    pub fn deviations(&self) -> &[f64] {
        &self.deviations
    }

    /// σ-mass of each child cell at the quadrature resolution.
    pub fn child_masses(&self) -> &[f64] {
        &self.child_masses
    }

    /// `‖Δ^σ_P g‖²_{L²(σ)} = Σ_children deviation²·σ(child)`.
    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    /// The difference as a function: the child deviation at points of the
    /// cube's vertical slab, zero elsewhere.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        if !self.cube.vertical_contains(x) {
            return 0.0;
        }
        self.deviations[child_of(&self.cube, x)]
    }
}

/// Child cell of `x` inside `q`: one bit per axis, set when the coordinate
/// clears the midpoint.  Callers guarantee `x` lies in the slab.
fn child_of(q: &GammaCube, x: &[f64]) -> usize {
    let half = q.side() / 2.0;
    let mut idx = 0usize;
    for (i, &c) in q.corner().iter().enumerate() {
        if x[i] >= c + half {
            idx |= 1 << i;
        }
    }
    idx
}

/// Averages of `values` against `sigma` over a cube and its `2ⁿ` children,
/// exact at the quadrature resolution: plain weighted means over the nodes
/// falling in each half-open cell.
///
/// The mean-zero identity `Σ_children deviation·σ(child) = 0` holds by
/// construction up to summation rounding, and nested coefficients are
/// `L²(σ)`-orthogonal for the same reason; both are asserted in tests, not
/// re-derived here.
pub fn martingale_difference(
    sigma: &DiscreteMeasure,
    values: &[f64],
    p: &GammaCube,
) -> Result<MartingaleCoefficient> {
    if values.len() != sigma.len() {
        return Err(Error::DimensionMismatch {
            expected: sigma.len(),
            got: values.len(),
        });
    }
    let n = p.corner().len();
    if sigma.dim() < n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sigma.dim(),
        });
    }
    if n > 24 {
        return Err(Error::InvalidParameter {
            name: "cube",
            reason: format!("{n} base dimensions would need 2^{n} children"),
        });
    }
    let children = 1usize << n;
    let mut child_sum = vec![0.0_f64; children];
    let mut child_mass = vec![0.0_f64; children];
    let mut parent_sum = 0.0_f64;
    let mut parent_mass = 0.0_f64;
    for (i, (x, w)) in sigma.iter().enumerate() {
        if !p.vertical_contains(x) {
            continue;
        }
        let c = child_of(p, x);
        child_sum[c] += values[i] * w;
        child_mass[c] += w;
        parent_sum += values[i] * w;
        parent_mass += w;
    }
    if !(parent_mass > 0.0) {
        return Err(Error::EmptyCube(format!(
            "no σ mass over the base box at corner {:?}, side {}",
            p.corner(),
            p.side()
        )));
    }
    let parent_avg = parent_sum / parent_mass;
    let mut deviations = vec![0.0_f64; children];
    let mut norm_sq = 0.0_f64;
    for c in 0..children {
        if child_mass[c] > 0.0 {
            deviations[c] = child_sum[c] / child_mass[c] - parent_avg;
            norm_sq += deviations[c] * deviations[c] * child_mass[c];
        }
    }
    Ok(MartingaleCoefficient {
        cube: p.clone(),
        deviations,
        child_masses: child_mass,
        norm_sq,
    })
}

/// A stopped cube together with the density conditions that tripped.  More
/// than one flag can be set; at least one always is.
#[derive(Debug, Clone)]
pub struct StopRecord {
    pub cube: GammaCube,
    /// The approximation gave `λB̃_Q` more than `M·ℓ(Q)ⁿ`.
    pub high_nu: bool,
    /// The ambient measure gave `λB̃_Q` more than `M·ℓ(Q)ⁿ`.
    pub high_mu: bool,
    /// The cube itself carries less than `M⁻¹·ℓ(Q)ⁿ` of the ambient measure.
    pub low_mu: bool,
}

/// One stopping-time tree: the root cube, surviving members by level, and
/// the stopped cubes by level.  Construction guarantees the semicoherent
/// invariants — the root is a member, parents of members are members, every
/// stop is a non-member whose parent is a member, stops are pairwise
/// disjoint — and [`validate_tree`] re-checks them from scratch.
#[derive(Debug, Clone)]
pub struct CubeTree {
    root: GammaCube,
    members: Vec<Vec<GammaCube>>,
    stop: Vec<Vec<StopRecord>>,
    thresholds: TreeThresholds,
}

impl CubeTree {
    /// Assemble a tree from raw parts without any checking.  Exists for
    /// diagnostics and for planting defects in validator tests; trees built
    /// by [`build_stopping_tree`] satisfy the invariants by construction.
    pub fn from_parts(
        root: GammaCube,
        members: Vec<Vec<GammaCube>>,
        stop: Vec<Vec<StopRecord>>,
        thresholds: TreeThresholds,
    ) -> Self {
        CubeTree {
            root,
            members,
            stop,
            thresholds,
        }
    }

    pub fn root(&self) -> &GammaCube {
        &self.root
    }

    /// Members by level; level 0 holds exactly the root.
    pub fn member_levels(&self) -> &[Vec<GammaCube>] {
        &self.members
    }

    /// Stop records by the stopped cube's level.
    pub fn stop_levels(&self) -> &[Vec<StopRecord>] {
        &self.stop
    }

    pub fn thresholds(&self) -> TreeThresholds {
        self.thresholds
    }

    pub fn member_count(&self) -> usize {
        self.members.iter().map(Vec::len).sum()
    }

    pub fn stop_count(&self) -> usize {
        self.stop.iter().map(Vec::len).sum()
    }

    pub fn iter_members(&self) -> impl Iterator<Item = &GammaCube> + '_ {
        self.members.iter().flatten()
    }

    pub fn iter_stops(&self) -> impl Iterator<Item = &StopRecord> + '_ {
        self.stop.iter().flatten()
    }

    /// JSON dump; cube entries report the stopping ball radius
    /// `λ·Λ·3·diam` in their `r_big_ball` field.
    pub fn to_json_value(&self) -> Value {
        let scale = LAMBDA * self.thresholds.lambda;
        json!({
            "root": self.root.to_json_value(scale),
            "thresholds": self.thresholds.to_json_value(),
            "member_count": self.member_count(),
            "stop_count": self.stop_count(),
            "members": self.members.iter().map(|level| {
                Value::Array(level.iter().map(|q| q.to_json_value(scale)).collect())
            }).collect::<Vec<_>>(),
            "stops": self.stop.iter().map(|level| {
                Value::Array(level.iter().map(|s| json!({
                    "cube": s.cube.to_json_value(scale),
                    "high_nu": s.high_nu,
                    "high_mu": s.high_mu,
                    "low_mu": s.low_mu,
                })).collect())
            }).collect::<Vec<_>>(),
        })
    }
}

/// The stopping forest of one shifted grid: every scale-`ℓ(root)` cube of
/// the shifted grid that touches the base root gets its own tree.
#[derive(Debug, Clone)]
pub struct ShiftTrees {
    shift: Vec<u8>,
    trees: Vec<CubeTree>,
}

impl ShiftTrees {
    pub fn shift(&self) -> &[u8] {
        &self.shift
    }

    pub fn trees(&self) -> &[CubeTree] {
        &self.trees
    }
}

/// Output of [`build_stopping_tree`]: the per-shift forests in the order
/// the approximation family was given, plus the combined tree on the base
/// grid.
#[derive(Debug, Clone)]
pub struct StoppingForest {
    base_root: GammaCube,
    per_shift: Vec<ShiftTrees>,
    combined: Vec<Vec<GammaCube>>,
    thresholds: TreeThresholds,
}

impl StoppingForest {
    pub fn base_root(&self) -> &GammaCube {
        &self.base_root
    }

    pub fn per_shift(&self) -> &[ShiftTrees] {
        &self.per_shift
    }

    /// Combined-tree members by level.  A base cube is present when every
    /// shift in the family contributed a member of the same sidelength
    /// whose base box touches it, so the combined tree inherits the
    /// semicoherent invariants from the per-shift trees.
    pub fn combined_levels(&self) -> &[Vec<GammaCube>] {
        &self.combined
    }

    pub fn combined_count(&self) -> usize {
        self.combined.iter().map(Vec::len).sum()
    }

    pub fn thresholds(&self) -> TreeThresholds {
        self.thresholds
    }

    /// Full JSON export: thresholds, per-shift trees with their stop
    /// masses, and the combined tree.  Packing subtotals live in
    /// [`PackingSum::to_json_value`] and are attached by callers that chose
    /// an evaluator.
    pub fn to_json_value(&self, mu: &DiscreteMeasure) -> Value {
        let scale = LAMBDA * self.thresholds.lambda;
        json!({
            "thresholds": self.thresholds.to_json_value(),
            "base_root": self.base_root.to_json_value(scale),
            "shifts": self.per_shift.iter().map(|st| {
                let masses: Vec<f64> =
                    st.trees.iter().map(|t| stop_mass(t, mu)).collect();
                json!({
                    "shift": st.shift,
                    "stop_mass": masses.iter().sum::<f64>(),
                    "trees": st.trees.iter().zip(&masses).map(|(t, &m)| {
                        let mut v = t.to_json_value();
                        v["stop_mass"] = m.into();
                        v
                    }).collect::<Vec<_>>(),
                })
            }).collect::<Vec<_>>(),
            "combined": {
                "count": self.combined_count(),
                "levels": self.combined.iter().map(|level| {
                    Value::Array(
                        level.iter().map(|q| q.to_json_value(scale)).collect(),
                    )
                }).collect::<Vec<_>>(),
            },
        })
    }
}

struct Trip {
    high_nu: bool,
    high_mu: bool,
    low_mu: bool,
}

impl Trip {
    fn any(&self) -> bool {
        self.high_nu || self.high_mu || self.low_mu
    }
}

/// The three density conditions at one cube, with the strict inequalities
/// of the construction: stopping wants `> Mℓⁿ` and `< M⁻¹ℓⁿ`.
fn evaluate_trips(
    q: &GammaCube,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    th: &TreeThresholds,
) -> Trip {
    let n = q.corner().len() as i32;
    let vol = q.side().powi(n);
    let ball = q.big_ball(LAMBDA).scaled(th.lambda);
    Trip {
        high_nu: nu.ball_mass(&ball) > th.m * vol,
        high_mu: mu.ball_mass(&ball) > th.m * vol,
        low_mu: cube_mass(mu, q) < vol / th.m,
    }
}

/// Flat lattice indices of the `2ⁿ` children of a cube, matching the
/// odometer order of the lattice builder (axis 0 least significant).
fn child_indices(parent_flat: usize, parent_level: usize, n: usize) -> Vec<usize> {
    let per_axis_parent = 1usize << parent_level;
    let per_axis_child = per_axis_parent << 1;
    let mut digits = vec![0usize; n];
    let mut rem = parent_flat;
    for d in digits.iter_mut() {
        *d = rem % per_axis_parent;
        rem /= per_axis_parent;
    }
    let mut out = Vec::with_capacity(1 << n);
    for b in 0..(1usize << n) {
        let mut flat = 0usize;
        let mut scale = 1usize;
        for (i, &dg) in digits.iter().enumerate() {
            flat += (2 * dg + ((b >> i) & 1)) * scale;
            scale *= per_axis_child;
        }
        out.push(flat);
    }
    out
}

/// Pre-shift corners of the scale-`ℓ(root)` cubes of the `e/3`-shifted grid
/// whose base boxes touch the root.  Per axis at most two grid columns can
/// overlap a half-open interval of the grid's own width, so the family has
/// at most `2ⁿ` roots; for the zero shift it is exactly the root itself.
fn shifted_root_corners(root: &GammaCube, e: &[u8]) -> Vec<Vec<f64>> {
    let l = root.side();
    let mut per_axis: Vec<Vec<f64>> = Vec::with_capacity(e.len());
    for (i, &ei) in e.iter().enumerate() {
        let c = root.corner()[i];
        let off = ei as f64 / 3.0;
        let m0 = ((c - off) / l).floor();
        let mut cols = Vec::new();
        for dm in -1..=1 {
            let m = m0 + dm as f64;
            let a = m * l + off;
            if a < c + l && c < a + l {
                cols.push(m * l);
            }
        }
        per_axis.push(cols);
    }
    let mut corners: Vec<Vec<f64>> = vec![Vec::new()];
    for cols in &per_axis {
        let mut next = Vec::with_capacity(corners.len() * cols.len());
        for stem in &corners {
            for &col in cols {
                let mut c = stem.clone();
                c.push(col);
                next.push(c);
            }
        }
        corners = next;
    }
    corners
}

/// Open overlap of two half-open base boxes — the equal-sidelength
/// adjacency of the combined tree and the disjointness check for stops.
fn boxes_meet(a: &GammaCube, b: &GammaCube) -> bool {
    a.corner().iter().zip(b.corner()).all(|(&ca, &cb)| {
        ca.max(cb) < (ca + a.side()).min(cb + b.side())
    })
}

/// Grow one tree by level-synchronous descent: children of surviving
/// members are tested against the density conditions; trips become stop
/// records, survivors become members.  The root is never tested — it
/// anchors the tree by definition, and the validator reports whether it
/// honors the member thresholds.
fn grow_tree(
    graph: &LipschitzGraph,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    pre_shift_corner: &[f64],
    root_side: f64,
    depth: usize,
    e: &[u8],
    th: TreeThresholds,
) -> Result<CubeTree> {
    let levels = build_lattice(graph, pre_shift_corner, root_side, depth, e)?;
    let n = e.len();
    let mut members: Vec<Vec<GammaCube>> = Vec::with_capacity(depth + 1);
    let mut stop: Vec<Vec<StopRecord>> = vec![Vec::new(); depth + 1];
    members.push(vec![levels[0][0].clone()]);
    let mut alive: Vec<usize> = vec![0];
    for j in 1..=depth {
        let mut survivors: Vec<(usize, GammaCube)> = Vec::new();
        let mut stopped: Vec<(usize, StopRecord)> = Vec::new();
        for &parent in &alive {
            for flat in child_indices(parent, j - 1, n) {
                let q = &levels[j][flat];
                let trip = evaluate_trips(q, mu, nu, &th);
                if trip.any() {
                    stopped.push((
                        flat,
                        StopRecord {
                            cube: q.clone(),
                            high_nu: trip.high_nu,
                            high_mu: trip.high_mu,
                            low_mu: trip.low_mu,
                        },
                    ));
                } else {
                    survivors.push((flat, q.clone()));
                }
            }
        }
        survivors.sort_unstable_by_key(|(flat, _)| *flat);
        stopped.sort_unstable_by_key(|(flat, _)| *flat);
        alive = survivors.iter().map(|(flat, _)| *flat).collect();
        members.push(survivors.into_iter().map(|(_, q)| q).collect());
        stop[j] = stopped.into_iter().map(|(_, s)| s).collect();
    }
    Ok(CubeTree {
        root: levels[0][0].clone(),
        members,
        stop,
        thresholds: th,
    })
}

/// Build the stopping forests for a family of per-shift approximations and
/// merge them into the combined tree.
///
/// `nu_family` pairs each grid shift with the approximation measure used by
/// its high-density check; the ambient `mu` feeds the other two checks on
/// every shift.  The root must come from the unshifted grid; each shifted
/// grid contributes one tree per scale-`ℓ(root)` cube touching the root.
/// The construction is deterministic: trees follow the family order, and
/// members within a level follow the lattice order.
pub fn build_stopping_tree(
    mu: &DiscreteMeasure,
    nu_family: &[(Vec<u8>, DiscreteMeasure)],
    graph: &LipschitzGraph,
    root: &GammaCube,
    depth: usize,
    thresholds: TreeThresholds,
) -> Result<StoppingForest> {
    thresholds.validate()?;
    let n = graph.dim_base();
    let d = graph.dim_ambient();
    if root.corner().len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: root.corner().len(),
        });
    }
    if root.shift().iter().any(|&b| b != 0) {
        return Err(Error::InvalidParameter {
            name: "root",
            reason: "the base root must come from the unshifted grid".into(),
        });
    }
    if mu.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: mu.dim(),
        });
    }
    if nu_family.is_empty() {
        return Err(Error::InvalidParameter {
            name: "nu_family",
            reason: "at least one shift is needed; the combined tree \
                     quantifies over the family"
                .into(),
        });
    }
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    for (e, nu) in nu_family {
        if e.len() != n || e.iter().any(|&b| b > 1) {
            return Err(Error::InvalidParameter {
                name: "nu_family",
                reason: format!("shift {e:?} is not a 0/1 vector of length {n}"),
            });
        }
        if !seen.insert(e.clone()) {
            return Err(Error::InvalidParameter {
                name: "nu_family",
                reason: format!("shift {e:?} appears twice"),
            });
        }
        if nu.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: nu.dim(),
            });
        }
    }

    let mut per_shift = Vec::with_capacity(nu_family.len());
    for (e, nu) in nu_family {
        let mut trees = Vec::new();
        for corner in shifted_root_corners(root, e) {
            trees.push(grow_tree(
                graph,
                mu,
                nu,
                &corner,
                root.side(),
                depth,
                e,
                thresholds,
            )?);
        }
        per_shift.push(ShiftTrees {
            shift: e.clone(),
            trees,
        });
    }

    // Members of each shift, per level, sorted by the first base coordinate
    // so the adjacency scan below can window instead of scanning the level.
    let sorted: Vec<Vec<Vec<&GammaCube>>> = per_shift
        .iter()
        .map(|st| {
            (0..=depth)
                .map(|j| {
                    let mut level: Vec<&GammaCube> = st
                        .trees
                        .iter()
                        .flat_map(|t| t.members[j].iter())
                        .collect();
                    level.sort_unstable_by(|a, b| {
                        a.corner()[0].total_cmp(&b.corner()[0])
                    });
                    level
                })
                .collect()
        })
        .collect();

    let base_levels =
        build_lattice(graph, root.corner(), root.side(), depth, &vec![0; n])?;
    let mut combined: Vec<Vec<GammaCube>> = Vec::with_capacity(depth + 1);
    for (j, level) in base_levels.iter().enumerate() {
        let mut kept = Vec::new();
        'cube: for q in level {
            for shift_levels in &sorted {
                if !meets_any(&shift_levels[j], q) {
                    continue 'cube;
                }
            }
            kept.push(q.clone());
        }
        combined.push(kept);
    }

    Ok(StoppingForest {
        base_root: base_levels[0][0].clone(),
        per_shift,
        combined,
        thresholds,
    })
}

/// Whether any cube in a list sorted by first corner coordinate touches
/// `q`.  Same-level cubes share the sidelength, so candidates live in the
/// window `(c₀ − s, c₀ + s)` of first coordinates.
fn meets_any(sorted: &[&GammaCube], q: &GammaCube) -> bool {
    let c0 = q.corner()[0];
    let s = q.side();
    let lo = sorted.partition_point(|p| p.corner()[0] <= c0 - s);
    for p in &sorted[lo..] {
        if p.corner()[0] >= c0 + s {
            break;
        }
        if boxes_meet(p, q) {
            return true;
        }
    }
    false
}

/// Mass of the union of the stopping region.  Stop cubes are pairwise
/// disjoint, so the sharp union mass is the plain sum of slab masses.
pub fn stop_mass(tree: &CubeTree, mu: &DiscreteMeasure) -> f64 {
    tree.iter_stops().map(|s| cube_mass(mu, &s.cube)).sum()
}

/// One level of a packing sum.
#[derive(Debug, Clone)]
pub struct LevelSum {
    pub side: f64,
    pub sum: f64,
    pub evaluated: usize,
    pub undefined: usize,
}

/// Partial packing sum `Σ_members value(Q)²·ℓ(Q)ⁿ` with its per-level
/// breakdown.  Members where the evaluator declined are excluded from the
/// sum and counted, never silently zeroed.
#[derive(Debug, Clone)]
pub struct PackingSum {
    total: f64,
    per_level: Vec<LevelSum>,
}

impl PackingSum {
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn per_level(&self) -> &[LevelSum] {
        &self.per_level
    }

    pub fn evaluated(&self) -> usize {
        self.per_level.iter().map(|l| l.evaluated).sum()
    }

    pub fn undefined(&self) -> usize {
        self.per_level.iter().map(|l| l.undefined).sum()
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "total": self.total,
            "evaluated": self.evaluated(),
            "undefined": self.undefined(),
            "levels": self.per_level.iter().map(|l| json!({
                "side": l.side,
                "sum": l.sum,
                "evaluated": l.evaluated,
                "undefined": l.undefined,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Sum `value(Q)²·ℓ(Q)ⁿ` over the members of a tree, level by level.  The
/// evaluator returns the coefficient assigned to a member, or `None` to
/// mark it undefined; growth of the per-level subtotals is the divergence
/// diagnostic — a constant coefficient on a full binary tree already grows
/// linearly in depth.
pub fn packing_sum(
    tree: &CubeTree,
    mut evaluator: impl FnMut(&GammaCube) -> Option<f64>,
) -> PackingSum {
    let n = tree.root.corner().len() as i32;
    let mut per_level = Vec::with_capacity(tree.members.len());
    let mut total = 0.0_f64;
    for (j, level) in tree.members.iter().enumerate() {
        let side = tree.root.side() * 0.5_f64.powi(j as i32);
        let mut sum = 0.0_f64;
        let mut evaluated = 0usize;
        let mut undefined = 0usize;
        for q in level {
            match evaluator(q) {
                Some(v) => {
                    sum += v * v * q.side().powi(n);
                    evaluated += 1;
                }
                None => undefined += 1,
            }
        }
        total += sum;
        per_level.push(LevelSum {
            side,
            sum,
            evaluated,
            undefined,
        });
    }
    PackingSum { total, per_level }
}

/// Result of a threshold sweep: the candidate thresholds in the order they
/// were tried, the worst-case stop mass each produced (maximum over shifts
/// of the summed stop mass of that shift's forest), and the first candidate
/// whose worst case met the target `ε·μ(root)`.
#[derive(Debug, Clone)]
pub struct MSweep {
    candidates: Vec<f64>,
    worst_masses: Vec<f64>,
    target: f64,
    chosen: Option<f64>,
}

impl MSweep {
    pub fn candidates(&self) -> &[f64] {
        &self.candidates
    }

    pub fn worst_masses(&self) -> &[f64] {
        &self.worst_masses
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn chosen(&self) -> Option<f64> {
        self.chosen
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "candidates": self.candidates,
            "worst_stop_masses": self.worst_masses,
            "target": self.target,
            "chosen": self.chosen,
        })
    }
}

/// Sweep the density threshold over `candidates` and report which one first
/// brings every shift's stop mass under `ε·μ(root)`.  The lemma behind the
/// construction makes the threshold existential in everything else, so it
/// is always picked this way and recorded — `chosen` stays `None` when no
/// candidate reaches the target, and callers must treat that as a finding,
/// not pick a default.
pub fn sweep_m(
    mu: &DiscreteMeasure,
    nu_family: &[(Vec<u8>, DiscreteMeasure)],
    graph: &LipschitzGraph,
    root: &GammaCube,
    depth: usize,
    lambda: f64,
    epsilon: f64,
    candidates: &[f64],
) -> Result<MSweep> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter {
            name: "candidates",
            reason: "the sweep needs at least one threshold".into(),
        });
    }
    let target = epsilon * cube_mass(mu, root);
    let mut worst_masses = Vec::with_capacity(candidates.len());
    let mut chosen = None;
    for &m in candidates {
        let forest = build_stopping_tree(
            mu,
            nu_family,
            graph,
            root,
            depth,
            TreeThresholds {
                m,
                lambda,
                epsilon,
            },
        )?;
        let worst = forest
            .per_shift()
            .iter()
            .map(|st| st.trees().iter().map(|t| stop_mass(t, mu)).sum::<f64>())
            .fold(0.0_f64, f64::max);
        if chosen.is_none() && worst < target {
            chosen = Some(m);
        }
        worst_masses.push(worst);
    }
    Ok(MSweep {
        candidates: candidates.to_vec(),
        worst_masses,
        target,
        chosen,
    })
}

/// Re-derived audit of one tree.  Structure is checked set-theoretically
/// (bit-exact cube identities within one lattice build), thresholds by
/// re-evaluating the density conditions on every member — the root
/// included, since the membership bounds are claimed for all members.
#[derive(Debug, Clone)]
pub struct TreeReport {
    pub members: usize,
    pub stops: usize,
    /// Level 0 is not exactly the root, or a member leaves the root's box.
    pub root_failures: usize,
    /// Members at level `j ≥ 1` with no member at level `j−1` containing
    /// their corner.
    pub parent_failures: usize,
    /// Stop cubes that are members, sit at level 0, or lack a member
    /// parent.
    pub stop_failures: usize,
    /// Ordered pairs of stop cubes whose base boxes overlap.
    pub overlap_failures: usize,
    /// Members violating a density bound:
    /// `μ(λB̃_Q) ≤ Mℓⁿ`, `ν(λB̃_Q) ≤ Mℓⁿ`, or `μ(Q) ≥ M⁻¹ℓⁿ`.
    pub threshold_failures: usize,
    /// Stop records whose recorded trip flags disagree with re-evaluation.
    pub reason_failures: usize,
}

impl TreeReport {
    pub fn all_pass(&self) -> bool {
        self.root_failures == 0
            && self.parent_failures == 0
            && self.stop_failures == 0
            && self.overlap_failures == 0
            && self.threshold_failures == 0
            && self.reason_failures == 0
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "members": self.members,
            "stops": self.stops,
            "root_failures": self.root_failures,
            "parent_failures": self.parent_failures,
            "stop_failures": self.stop_failures,
            "overlap_failures": self.overlap_failures,
            "threshold_failures": self.threshold_failures,
            "reason_failures": self.reason_failures,
            "all_pass": self.all_pass(),
        })
    }
}

/// Bitwise identity of a cube within one lattice build: members, stops and
/// parents are clones of the same constructed objects, so their floats
/// match exactly and no geometric tolerance is needed for set membership.
fn cube_id(q: &GammaCube) -> (u64, Vec<u64>) {
    (
        q.side().to_bits(),
        q.corner().iter().map(|c| c.to_bits()).collect(),
    )
}

/// Check the semicoherent invariants and membership thresholds of a tree
/// against the measures that built it.
pub fn validate_tree(
    tree: &CubeTree,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> TreeReport {
    let th = tree.thresholds;
    let root = &tree.root;
    let mut report = TreeReport {
        members: tree.member_count(),
        stops: tree.stop_count(),
        root_failures: 0,
        parent_failures: 0,
        stop_failures: 0,
        overlap_failures: 0,
        threshold_failures: 0,
        reason_failures: 0,
    };

    let member_ids: Vec<HashSet<(u64, Vec<u64>)>> = tree
        .members
        .iter()
        .map(|level| level.iter().map(cube_id).collect())
        .collect();

    // (T1) level 0 is exactly the root, and every member stays inside it.
    if tree.members.is_empty()
        || tree.members[0].len() != 1
        || cube_id(&tree.members[0][0]) != cube_id(root)
    {
        report.root_failures += 1;
    }
    let tol = 1e-9 * root.side();
    for q in tree.iter_members() {
        let inside = q.corner().iter().zip(root.corner()).all(|(&c, &rc)| {
            c >= rc - tol && c + q.side() <= rc + root.side() + tol
        });
        if !inside {
            report.root_failures += 1;
        }
    }

    // (T2) the parent of every non-root member is a member.  The corner of
    // a child is a point of its parent, so containment of the corner in
    // some member one level up is the exact test.
    for (j, level) in tree.members.iter().enumerate().skip(1) {
        for q in level {
            let has_parent = tree.members[j - 1]
                .iter()
                .any(|p| p.base_contains(q.corner()));
            if !has_parent {
                report.parent_failures += 1;
            }
        }
    }

    // (S) stops are non-members whose parent is a member.
    for (j, level) in tree.stop.iter().enumerate() {
        for s in level {
            if member_ids
                .get(j)
                .is_some_and(|ids| ids.contains(&cube_id(&s.cube)))
            {
                report.stop_failures += 1;
            }
            let has_parent = j >= 1
                && tree.members.get(j - 1).is_some_and(|parents| {
                    parents.iter().any(|p| p.base_contains(s.cube.corner()))
                });
            if !has_parent {
                report.stop_failures += 1;
            }
        }
    }

    // Stop cubes are pairwise disjoint.
    let stops: Vec<&StopRecord> = tree.iter_stops().collect();
    for (i, a) in stops.iter().enumerate() {
        for b in &stops[i + 1..] {
            if boxes_meet(&a.cube, &b.cube) {
                report.overlap_failures += 1;
            }
        }
    }

    // Membership thresholds, root included.
    for q in tree.iter_members() {
        if evaluate_trips(q, mu, nu, &th).any() {
            report.threshold_failures += 1;
        }
    }

    // Recorded stop reasons must match re-evaluation.
    for s in tree.iter_stops() {
        let trip = evaluate_trips(&s.cube, mu, nu, &th);
        if trip.high_nu != s.high_nu
            || trip.high_mu != s.high_mu
            || trip.low_mu != s.low_mu
        {
            report.reason_failures += 1;
        }
    }

    report
}
