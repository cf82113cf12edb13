//! Optimal transport between discrete measures: exact Wasserstein distances
//! via network simplex, an exhaustive enumeration oracle for tiny instances,
//! a log-domain entropic approximation, and the localized Lipschitz-dual
//! distance used by the dual-flatness coefficient.

mod simplex;

use crate::error::{Error, Result};
use crate::measure::{Ball, DiscreteMeasure};
use crate::vecmath::{compensated_sum, dist, dist2};
use serde_json::{json, Value};

/// Which engine produced a [`TransportResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Exact,
    Oracle,
    Entropic,
}

impl Solver {
    pub fn as_str(self) -> &'static str {
        match self {
            Solver::Exact => "exact",
            Solver::Oracle => "oracle",
            Solver::Entropic => "entropic",
        }
    }
}

/// A transport plan between two measures: `(source_index, target_index,
/// moved_mass)` triples with strictly positive mass, indices referring to the
/// original atom order of the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub p: u32,
    pub entries: Vec<(usize, usize, f64)>,
}

impl TransportPlan {
    /// Verify the marginal constraints: row sums match the source weights and
    /// column sums the target weights, to 1e-9 relative, with every entry
    /// positive and in range.
    pub fn check_feasible(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
        let mut row = vec![0.0; mu.len()];
        let mut col = vec![0.0; nu.len()];
        for &(i, j, f) in &self.entries {
            if i >= mu.len() || j >= nu.len() {
                return Err(Error::InvalidParameter {
                    name: "plan",
                    reason: format!("entry ({i},{j}) out of range"),
                });
            }
            if !(f > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "plan",
                    reason: format!("nonpositive mass {f} at ({i},{j})"),
                });
            }
            row[i] += f;
            col[j] += f;
        }
        for (i, (&shipped, want)) in row.iter().zip(mu.weights()).enumerate() {
            if (shipped - want).abs() > 1e-9 * want.max(1.0) {
                return Err(Error::InvalidParameter {
                    name: "plan",
                    reason: format!("row {i} ships {shipped} against weight {want}"),
                });
            }
        }
        for (j, (&recv, want)) in col.iter().zip(nu.weights()).enumerate() {
            if (recv - want).abs() > 1e-9 * want.max(1.0) {
                return Err(Error::InvalidParameter {
                    name: "plan",
                    reason: format!("column {j} receives {recv} against weight {want}"),
                });
            }
        }
        Ok(())
    }
}

/// Distance plus the plan that attains it.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    pub distance: f64,
    pub plan: TransportPlan,
    pub solver: Solver,
}

impl TransportResult {
    /// JSON export: `{"p", "distance", "solver", "plan": [[i, j, mass], ...]}`.
    pub fn to_json_value(&self) -> Value {
        let plan: Vec<Value> = self
            .plan
            .entries
            .iter()
            .map(|&(i, j, f)| json!([i, j, f]))
            .collect();
        json!({
            "p": self.plan.p,
            "distance": self.distance,
            "solver": self.solver.as_str(),
            "plan": plan,
        })
    }
}

/// What to do when the two total masses disagree beyond 1e-9 relative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassPolicy {
    /// Refuse (the default: callers are expected to match masses themselves).
    Strict,
    /// Scale the lighter measure's weights up so the totals match; the plan
    /// then refers to the scaled weights.
    RescaleSmaller,
}

/// Exact Wasserstein-`p` distance (`p ∈ {1, 2}`) between equal-mass measures,
/// with the optimal plan.  Deterministic for a fixed input order; swapping
/// the arguments transposes the plan and leaves the distance bit-identical.
pub fn exact_wasserstein(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: u32,
) -> Result<TransportResult> {
    exact_wasserstein_with(mu, nu, p, MassPolicy::Strict)
}

pub fn exact_wasserstein_with(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: u32,
    policy: MassPolicy,
) -> Result<TransportResult> {
    check_p(p)?;
    check_dims(mu, nu)?;
    // Solve on a canonically ordered pair so that W(μ,ν) and W(ν,μ) run the
    // identical computation; transpose the plan on the way out if we swapped.
    let swapped = cmp_measures(mu, nu) == std::cmp::Ordering::Greater;
    let (src, dst) = if swapped { (nu, mu) } else { (mu, nu) };

    let (s_idx, s_pos, mut s_w) = positive_atoms(src)?;
    let (t_idx, t_pos, mut t_w) = positive_atoms(dst)?;
    let ms = compensated_sum(s_w.iter().copied());
    let mt = compensated_sum(t_w.iter().copied());
    if (ms - mt).abs() > 1e-9 * ms.max(mt) {
        match policy {
            MassPolicy::Strict => return Err(Error::MassMismatch { mu: ms, nu: mt }),
            MassPolicy::RescaleSmaller => {
                if ms < mt {
                    let c = mt / ms;
                    s_w.iter_mut().for_each(|w| *w *= c);
                } else {
                    let c = ms / mt;
                    t_w.iter_mut().for_each(|w| *w *= c);
                }
            }
        }
    }

    let d = src.dim();
    let cost = |i: usize, j: usize| pair_cost(&s_pos[i * d..(i + 1) * d], &t_pos[j * d..(j + 1) * d], p);
    let sol = simplex::solve(&s_w, &t_w, cost)?;

    let mut entries: Vec<(usize, usize, f64)> = sol
        .entries
        .into_iter()
        .map(|(i, j, f)| {
            if swapped {
                (t_idx[j], s_idx[i], f)
            } else {
                (s_idx[i], t_idx[j], f)
            }
        })
        .collect();
    entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    Ok(TransportResult {
        distance: root_p(sol.cost, p),
        plan: TransportPlan { p, entries },
        solver: Solver::Exact,
    })
}

/// Exhaustive-enumeration Wasserstein oracle.  Both weight vectors must lie
/// on a common rational grid `k·(total/D)` with `2D ≤ 10` unit atoms in
/// total; the optimum is found by trying every assignment of unit atoms with
/// branch-and-bound pruning.  Exists so the simplex solver can be checked
/// against something that cannot share its bugs.
pub fn brute_force_wasserstein(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: u32,
) -> Result<TransportResult> {
    check_p(p)?;
    check_dims(mu, nu)?;
    let (s_idx, s_pos, s_w) = positive_atoms(mu)?;
    let (t_idx, t_pos, t_w) = positive_atoms(nu)?;
    let ms = compensated_sum(s_w.iter().copied());
    let mt = compensated_sum(t_w.iter().copied());
    if (ms - mt).abs() > 1e-9 * ms.max(mt) {
        return Err(Error::MassMismatch { mu: ms, nu: mt });
    }

    const DENOM_CAP: usize = 1_000_000;
    const UNIT_CAP: usize = 10;
    let fits = |d: usize| -> Option<(Vec<usize>, Vec<usize>)> {
        let to_units = |ws: &[f64]| -> Option<Vec<usize>> {
            let mut units = Vec::with_capacity(ws.len());
            let mut total = 0usize;
            for &w in ws {
                let u = w * d as f64 / ms;
                let r = u.round();
                if (u - r).abs() > 1e-6 * (d as f64) || r < 1.0 {
                    return None;
                }
                units.push(r as usize);
                total += r as usize;
            }
            (total == d).then_some(units)
        };
        Some((to_units(&s_w)?, to_units(&t_w)?))
    };
    let mut found = None;
    for d in 1..=DENOM_CAP {
        if let Some(u) = fits(d) {
            found = Some((d, u));
            break;
        }
    }
    let Some((denom, (s_units, t_units))) = found else {
        return Err(Error::OracleTooLarge(format!(
            "weights have no common denominator ≤ {DENOM_CAP} relative to the total mass"
        )));
    };
    if 2 * denom > UNIT_CAP {
        return Err(Error::OracleTooLarge(format!(
            "common denominator {denom} needs {} unit atoms (cap {UNIT_CAP})",
            2 * denom
        )));
    }

    // Expand to unit atoms and enumerate assignments.
    let expand = |units: &[usize]| -> Vec<usize> {
        let mut out = Vec::with_capacity(denom);
        for (a, &u) in units.iter().enumerate() {
            for _ in 0..u {
                out.push(a);
            }
        }
        out
    };
    let su = expand(&s_units);
    let tu = expand(&t_units);
    let d = mu.dim();
    let unit_cost: Vec<Vec<f64>> = su
        .iter()
        .map(|&a| {
            tu.iter()
                .map(|&b| pair_cost(&s_pos[a * d..(a + 1) * d], &t_pos[b * d..(b + 1) * d], p))
                .collect()
        })
        .collect();

    let mut used = vec![false; denom];
    let mut assign = vec![0usize; denom];
    let mut best = f64::INFINITY;
    let mut best_assign = vec![0usize; denom];
    enumerate_assignments(
        0,
        0.0,
        &unit_cost,
        &mut used,
        &mut assign,
        &mut best,
        &mut best_assign,
    );

    let unit_mass = ms / denom as f64;
    let mut mass_by_pair: std::collections::BTreeMap<(usize, usize), f64> =
        std::collections::BTreeMap::new();
    for (k, &t) in best_assign.iter().enumerate() {
        *mass_by_pair
            .entry((s_idx[su[k]], t_idx[tu[t]]))
            .or_insert(0.0) += unit_mass;
    }
    let entries: Vec<(usize, usize, f64)> = mass_by_pair
        .into_iter()
        .map(|((i, j), f)| (i, j, f))
        .collect();
    let cost = compensated_sum(
        entries
            .iter()
            .map(|&(i, j, f)| f * pair_cost(mu.position(i), nu.position(j), p)),
    );
    Ok(TransportResult {
        distance: root_p(cost, p),
        plan: TransportPlan { p, entries },
        solver: Solver::Oracle,
    })
}

fn enumerate_assignments(
    level: usize,
    acc: f64,
    cost: &[Vec<f64>],
    used: &mut [bool],
    assign: &mut [usize],
    best: &mut f64,
    best_assign: &mut [usize],
) {
    if acc >= *best {
        return;
    }
    if level == cost.len() {
        *best = acc;
        best_assign.copy_from_slice(assign);
        return;
    }
    for t in 0..used.len() {
        if !used[t] {
            used[t] = true;
            assign[level] = t;
            enumerate_assignments(
                level + 1,
                acc + cost[level][t],
                cost,
                used,
                assign,
                best,
                best_assign,
            );
            used[t] = false;
        }
    }
}

/// Entropically regularized Wasserstein-`p`: log-domain Sinkhorn iterations
/// followed by rounding the plan to the exact marginals.  The returned plan
/// is feasible, so the reported distance is always an upper bound for the
/// exact one, approaching it as `ε → 0`.
pub fn entropic_wasserstein(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: u32,
    epsilon: f64,
    max_iters: usize,
) -> Result<TransportResult> {
    entropic_core(mu, nu, p, epsilon, max_iters).map(|(r, _)| r)
}

/// Same as [`entropic_wasserstein`] but also returns the dual objective after
/// each sweep.  The sweep is block-coordinate ascent on the dual, so the
/// sequence must be nondecreasing — a cheap internal consistency check.
pub(crate) fn entropic_core(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: u32,
    epsilon: f64,
    max_iters: usize,
) -> Result<(TransportResult, Vec<f64>)> {
    check_p(p)?;
    check_dims(mu, nu)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: format!("{epsilon} is not a positive finite real"),
        });
    }
    if max_iters == 0 {
        return Err(Error::InvalidParameter {
            name: "max_iters",
            reason: "must be at least 1".into(),
        });
    }
    let (s_idx, s_pos, s_w) = positive_atoms(mu)?;
    let (t_idx, t_pos, t_w) = positive_atoms(nu)?;
    let ms = compensated_sum(s_w.iter().copied());
    let mt = compensated_sum(t_w.iter().copied());
    if (ms - mt).abs() > 1e-9 * ms.max(mt) {
        return Err(Error::MassMismatch { mu: ms, nu: mt });
    }
    let m = s_w.len();
    let n = t_w.len();
    let d = mu.dim();

    // Probability-normalized marginals; everything is scaled back by the
    // total mass at the end.
    let a: Vec<f64> = s_w.iter().map(|w| w / ms).collect();
    let b: Vec<f64> = t_w.iter().map(|w| w / mt).collect();
    let la: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let cost_mat: Vec<f64> = (0..m * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            pair_cost(&s_pos[i * d..(i + 1) * d], &t_pos[j * d..(j + 1) * d], p)
        })
        .collect();

    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut scratch = vec![0.0; m.max(n)];
    let mut duals = Vec::new();
    let mut marginal_error = f64::INFINITY;

    for _it in 0..max_iters {
        for i in 0..m {
            let row = &cost_mat[i * n..(i + 1) * n];
            for j in 0..n {
                scratch[j] = (g[j] - row[j]) / epsilon;
            }
            f[i] = epsilon * la[i] - epsilon * log_sum_exp(&scratch[..n]);
        }
        for j in 0..n {
            for i in 0..m {
                scratch[i] = (f[i] - cost_mat[i * n + j]) / epsilon;
            }
            g[j] = epsilon * lb[j] - epsilon * log_sum_exp(&scratch[..m]);
        }
        // After the g-sweep the column marginals are exact; measure the rows.
        let mut plan_total = 0.0;
        let mut err = 0.0;
        for i in 0..m {
            let row = &cost_mat[i * n..(i + 1) * n];
            let mut ri = 0.0;
            for j in 0..n {
                ri += ((f[i] + g[j] - row[j]) / epsilon).exp();
            }
            plan_total += ri;
            err += (ri - a[i]).abs();
        }
        let dual = compensated_sum(f.iter().zip(&a).map(|(x, w)| x * w))
            + compensated_sum(g.iter().zip(&b).map(|(x, w)| x * w))
            - epsilon * plan_total;
        duals.push(dual);
        marginal_error = err;
        if !dual.is_finite() {
            break;
        }
        if err <= 1e-8 {
            let result = round_entropic_plan(
                &a, &b, &f, &g, &cost_mat, epsilon, m, n, ms, &s_idx, &t_idx, p,
            );
            return Ok((result, duals));
        }
    }
    Err(Error::EntropicDiverged {
        iterations: max_iters,
        marginal_error,
        dual_value: duals.last().copied().unwrap_or(f64::NEG_INFINITY),
    })
}

/// Round the implicit entropic plan to the exact marginals: scale rows down,
/// then columns, then add back the missing mass as a rank-one correction.
/// The result satisfies the marginals to float accuracy.
#[allow(clippy::too_many_arguments)]
fn round_entropic_plan(
    a: &[f64],
    b: &[f64],
    f: &[f64],
    g: &[f64],
    cost_mat: &[f64],
    epsilon: f64,
    m: usize,
    n: usize,
    total: f64,
    s_idx: &[usize],
    t_idx: &[usize],
    p: u32,
) -> TransportResult {
    let mut plan: Vec<f64> = (0..m * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            ((f[i] + g[j] - cost_mat[k]) / epsilon).exp()
        })
        .collect();
    for i in 0..m {
        let r: f64 = plan[i * n..(i + 1) * n].iter().sum();
        if r > a[i] {
            let c = a[i] / r;
            plan[i * n..(i + 1) * n].iter_mut().for_each(|x| *x *= c);
        }
    }
    for j in 0..n {
        let c: f64 = (0..m).map(|i| plan[i * n + j]).sum();
        if c > b[j] {
            let s = b[j] / c;
            (0..m).for_each(|i| plan[i * n + j] *= s);
        }
    }
    let err_a: Vec<f64> = (0..m)
        .map(|i| (a[i] - plan[i * n..(i + 1) * n].iter().sum::<f64>()).max(0.0))
        .collect();
    let err_b: Vec<f64> = (0..n)
        .map(|j| (b[j] - (0..m).map(|i| plan[i * n + j]).sum::<f64>()).max(0.0))
        .collect();
    let missing: f64 = err_a.iter().sum();
    if missing > 1e-300 {
        for i in 0..m {
            for j in 0..n {
                plan[i * n + j] += err_a[i] * err_b[j] / missing;
            }
        }
    }

    let cost = compensated_sum(
        plan.iter()
            .zip(cost_mat)
            .map(|(&mass, &c)| mass * total * c),
    );
    let mut entries = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let mass = plan[i * n + j] * total;
            if mass > 1e-18 * total {
                entries.push((s_idx[i], t_idx[j], mass));
            }
        }
    }
    entries.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    TransportResult {
        distance: root_p(cost.max(0.0), p),
        plan: TransportPlan { p, entries },
        solver: Solver::Entropic,
    }
}

/// Localized Lipschitz-dual distance: the supremum of `∫φ dμ − ∫φ dν` over
/// functions that are 1-Lipschitz and bounded by the distance to the
/// complement of `B` (hence vanish outside `B`).  The masses need not match.
///
/// Computed by reduction to a balanced transportation problem: the effective
/// ground cost between two atoms is `min(|x−y|, b(x)+b(y))` — mass may always
/// be routed through the boundary, where the admissible functions vanish —
/// and each side gains a boundary node absorbing the other side's total.
/// Since `b(x) = dist(x, B^c)` is 1-Lipschitz, this shortcut cost is still a
/// metric on the atoms, and the dual of the transportation problem is
/// exactly the original program over `φ`.
pub fn fb_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure, ball: &Ball) -> Result<f64> {
    check_dims(mu, nu)?;
    if ball.dim() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: ball.dim(),
        });
    }
    let keep = |m: &DiscreteMeasure| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut pos = Vec::new();
        let mut bnd = Vec::new();
        let mut w = Vec::new();
        for (x, wx) in m.iter() {
            if wx <= 0.0 {
                continue;
            }
            let slack = ball.radius() - dist(ball.center(), x);
            if slack > 0.0 {
                pos.extend_from_slice(x);
                bnd.push(slack);
                w.push(wx);
            }
        }
        (pos, bnd, w)
    };
    let (s_pos, s_b, mut s_w) = keep(mu);
    let (t_pos, t_b, mut t_w) = keep(nu);
    let ms = compensated_sum(s_w.iter().copied());
    let mt = compensated_sum(t_w.iter().copied());
    if ms == 0.0 && mt == 0.0 {
        return Ok(0.0);
    }
    // Boundary nodes: each side absorbs the other side's mass for free once
    // the boundary is reached.
    let ns = s_w.len();
    let nt = t_w.len();
    if mt > 0.0 {
        s_w.push(mt);
    }
    if ms > 0.0 {
        t_w.push(ms);
    }
    let d = mu.dim();
    let cost = |i: usize, j: usize| -> f64 {
        let src_boundary = i >= ns;
        let dst_boundary = j >= nt;
        match (src_boundary, dst_boundary) {
            (true, true) => 0.0,
            (true, false) => t_b[j],
            (false, true) => s_b[i],
            (false, false) => {
                let e = dist(&s_pos[i * d..(i + 1) * d], &t_pos[j * d..(j + 1) * d]);
                e.min(s_b[i] + t_b[j])
            }
        }
    };
    let sol = simplex::solve(&s_w, &t_w, cost)?;
    Ok(sol.cost)
}

// -- shared helpers ---------------------------------------------------------

fn check_p(p: u32) -> Result<()> {
    if p == 1 || p == 2 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "p",
            reason: format!("only p ∈ {{1, 2}} is supported, got {p}"),
        })
    }
}

fn check_dims(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    Ok(())
}

fn pair_cost(x: &[f64], y: &[f64], p: u32) -> f64 {
    match p {
        1 => dist(x, y),
        _ => dist2(x, y),
    }
}

fn root_p(cost: f64, p: u32) -> f64 {
    match p {
        1 => cost,
        _ => cost.max(0.0).sqrt(),
    }
}

/// Atoms of strictly positive weight, with their original indices and flat
/// positions.  Errors when nothing is left.
fn positive_atoms(m: &DiscreteMeasure) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    let mut idx = Vec::new();
    let mut pos = Vec::new();
    let mut w = Vec::new();
    for (i, (x, wx)) in m.iter().enumerate() {
        if wx > 0.0 {
            idx.push(i);
            pos.extend_from_slice(x);
            w.push(wx);
        }
    }
    if idx.is_empty() {
        return Err(Error::EmptyMeasure("measure has no positive-weight atom"));
    }
    Ok((idx, pos, w))
}

/// Total lexicographic order on measures (dimension, atom count, positions,
/// weights) used to canonicalize argument order for exact symmetry.
fn cmp_measures(a: &DiscreteMeasure, b: &DiscreteMeasure) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    a.dim()
        .cmp(&b.dim())
        .then(a.len().cmp(&b.len()))
        .then_with(|| {
            for i in 0..a.len() {
                for (x, y) in a.position(i).iter().zip(b.position(i)) {
                    let c = x.total_cmp(y);
                    if c != Ordering::Equal {
                        return c;
                    }
                }
                let c = a.weight(i).total_cmp(&b.weight(i));
                if c != Ordering::Equal {
                    return c;
                }
            }
            Ordering::Equal
        })
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !hi.is_finite() {
        return hi;
    }
    let s: f64 = xs.iter().map(|x| (x - hi).exp()).sum();
    hi + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn measure(dim: usize, rows: &[(&[f64], f64)]) -> DiscreteMeasure {
        DiscreteMeasure::from_rows(dim, rows.iter().map(|(p, w)| (p.to_vec(), *w))).unwrap()
    }

    fn random_pair(rng: &mut StdRng, k: usize, dim: usize, side: f64) -> (DiscreteMeasure, DiscreteMeasure) {
        let draw = |rng: &mut StdRng| {
            let mut m = DiscreteMeasure::new(dim);
            for _ in 0..k {
                let pos: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..side)).collect();
                m.push(&pos, rng.gen_range(0.1..1.0)).unwrap();
            }
            let t = m.total_mass();
            m.scaled(1.0 / t)
        };
        (draw(rng), draw(rng))
    }

    #[test]
    fn dirac_to_dirac() {
        let mu = measure(2, &[(&[0.0, 0.0], 1.0)]);
        let nu = measure(2, &[(&[1.0, 0.0], 1.0)]);
        let r = exact_wasserstein(&mu, &nu, 2).unwrap();
        assert!((r.distance - 1.0).abs() < 1e-12);
        assert_eq!(r.plan.entries, vec![(0, 0, 1.0)]);
        assert_eq!(r.solver, Solver::Exact);
        let r1 = exact_wasserstein(&mu, &nu, 1).unwrap();
        assert!((r1.distance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_measures_have_zero_distance() {
        let mut rng = StdRng::seed_from_u64(11);
        let (mu, _) = random_pair(&mut rng, 8, 2, 1.0);
        for p in [1u32, 2] {
            let r = exact_wasserstein(&mu, &mu, p).unwrap();
            assert!(r.distance.abs() < 1e-12, "p={p}: {}", r.distance);
        }
    }

    #[test]
    fn split_mass_example() {
        // Two unit atoms at 0 and 1 against a double atom at 1/2.
        let mu = measure(1, &[(&[0.0], 1.0), (&[1.0], 1.0)]);
        let nu = measure(1, &[(&[0.5], 2.0)]);
        let want = 0.5f64.sqrt();
        let exact = exact_wasserstein(&mu, &nu, 2).unwrap();
        assert!((exact.distance - want).abs() < 1e-12);
        let oracle = brute_force_wasserstein(&mu, &nu, 2).unwrap();
        assert!((oracle.distance - want).abs() < 1e-12);
        assert_eq!(oracle.solver, Solver::Oracle);
        oracle.plan.check_feasible(&mu, &nu).unwrap();
    }

    #[test]
    fn oracle_agrees_with_exact_on_random_grid_instances() {
        let mut rng = StdRng::seed_from_u64(0xabcd);
        for case in 0..25 {
            // Weights on a grid of 1/D with D ≤ 5 so the oracle stays legal.
            let denom = rng.gen_range(2..=5usize);
            let split = |rng: &mut StdRng, parts: usize| -> Vec<usize> {
                // positive integers summing to denom
                let mut cuts: Vec<usize> = (0..parts - 1).map(|_| rng.gen_range(1..denom)).collect();
                cuts.sort_unstable();
                cuts.dedup();
                let mut units = Vec::new();
                let mut prev = 0;
                for &c in &cuts {
                    units.push(c - prev);
                    prev = c;
                }
                units.push(denom - prev);
                units.retain(|&u| u > 0);
                units
            };
            let mk = |rng: &mut StdRng, units: &[usize]| {
                let mut m = DiscreteMeasure::new(2);
                for &u in units {
                    m.push(
                        &[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                        u as f64 / denom as f64,
                    )
                    .unwrap();
                }
                m
            };
            let s_parts = rng.gen_range(1..=3);
            let t_parts = rng.gen_range(1..=3);
            let su = split(&mut rng, s_parts);
            let tu = split(&mut rng, t_parts);
            let mu = mk(&mut rng, &su);
            let nu = mk(&mut rng, &tu);
            for p in [1u32, 2] {
                let e = exact_wasserstein(&mu, &nu, p).unwrap();
                let o = brute_force_wasserstein(&mu, &nu, p).unwrap();
                assert!(
                    (e.distance - o.distance).abs() <= 1e-9 * (1.0 + o.distance),
                    "case {case} p={p}: exact {} vs oracle {}",
                    e.distance,
                    o.distance
                );
                e.plan.check_feasible(&mu, &nu).unwrap();
                o.plan.check_feasible(&mu, &nu).unwrap();
            }
        }
    }

    #[test]
    fn oracle_rejects_off_grid_weights() {
        let mu = measure(1, &[(&[0.0], 1.0 / std::f64::consts::PI), (&[1.0], 1.0 - 1.0 / std::f64::consts::PI)]);
        let nu = measure(1, &[(&[0.5], 1.0)]);
        let err = brute_force_wasserstein(&mu, &nu, 2).unwrap_err();
        assert!(matches!(err, Error::OracleTooLarge(_)), "{err}");
    }

    #[test]
    fn oracle_rejects_fine_grids() {
        // Representable, but needs 2·8 = 16 unit atoms > 10.
        let mut mu = DiscreteMeasure::new(1);
        for i in 0..8 {
            mu.push(&[i as f64], 1.0 / 8.0).unwrap();
        }
        let nu = measure(1, &[(&[0.0], 1.0)]);
        let err = brute_force_wasserstein(&mu, &nu, 2).unwrap_err();
        assert!(matches!(err, Error::OracleTooLarge(_)), "{err}");
    }

    #[test]
    fn mass_mismatch_handling() {
        let mu = measure(1, &[(&[0.0], 1.0)]);
        let nu = measure(1, &[(&[1.0], 2.0)]);
        assert!(matches!(
            exact_wasserstein(&mu, &nu, 2).unwrap_err(),
            Error::MassMismatch { .. }
        ));
        // Opt-in rescaling: lighter side doubled, distance becomes the
        // two-unit move.
        let r = exact_wasserstein_with(&mu, &nu, 1, MassPolicy::RescaleSmaller).unwrap();
        assert!((r.distance - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_mismatched_inputs_error() {
        let empty = DiscreteMeasure::new(1);
        let mu = measure(1, &[(&[0.0], 1.0)]);
        assert!(exact_wasserstein(&empty, &mu, 2).is_err());
        assert!(exact_wasserstein(&mu, &empty, 2).is_err());
        let nu3 = measure(3, &[(&[0.0, 0.0, 0.0], 1.0)]);
        assert!(exact_wasserstein(&mu, &nu3, 2).is_err());
        assert!(exact_wasserstein(&mu, &mu, 3).is_err());
    }

    #[test]
    fn symmetry_is_exact_and_plan_transposes() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..10 {
            let (mu, nu) = random_pair(&mut rng, 6, 2, 1.0);
            for p in [1u32, 2] {
                let ab = exact_wasserstein(&mu, &nu, p).unwrap();
                let ba = exact_wasserstein(&nu, &mu, p).unwrap();
                assert_eq!(ab.distance, ba.distance); // bit-identical
                let mut transposed: Vec<_> =
                    ba.plan.entries.iter().map(|&(i, j, f)| (j, i, f)).collect();
                transposed.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
                assert_eq!(ab.plan.entries, transposed);
            }
        }
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let mut rng = StdRng::seed_from_u64(99);
        for p in [1u32, 2] {
            for _ in 0..50 {
                let (mu, nu) = random_pair(&mut rng, 5, 2, 1.0);
                let (rho, _) = random_pair(&mut rng, 4, 2, 1.0);
                let ab = exact_wasserstein(&mu, &nu, p).unwrap().distance;
                let ac = exact_wasserstein(&mu, &rho, p).unwrap().distance;
                let cb = exact_wasserstein(&rho, &nu, p).unwrap().distance;
                assert!(ab <= ac + cb + 1e-9, "p={p}: {ab} > {ac} + {cb}");
            }
        }
    }

    #[test]
    fn w1_below_w2_for_probability_measures() {
        let mut rng = StdRng::seed_from_u64(1234);
        for _ in 0..20 {
            let (mu, nu) = random_pair(&mut rng, 6, 2, 1.0);
            let w1 = exact_wasserstein(&mu, &nu, 1).unwrap().distance;
            let w2 = exact_wasserstein(&mu, &nu, 2).unwrap().distance;
            assert!(w1 <= w2 + 1e-9, "{w1} > {w2}");
        }
    }

    #[test]
    fn translation_equivariance() {
        let mut rng = StdRng::seed_from_u64(21);
        let (mu, nu) = random_pair(&mut rng, 7, 3, 1.0);
        let v = [3.25, -1.5, 0.75];
        let mu_t = mu.translated(&v).unwrap();
        let nu_t = nu.translated(&v).unwrap();
        for p in [1u32, 2] {
            let d0 = exact_wasserstein(&mu, &nu, p).unwrap().distance;
            let d1 = exact_wasserstein(&mu_t, &nu_t, p).unwrap().distance;
            assert!((d0 - d1).abs() <= 1e-10 * (1.0 + d0), "p={p}: {d0} vs {d1}");
        }
    }

    #[test]
    fn distance_matches_plan_cost() {
        let mut rng = StdRng::seed_from_u64(77);
        let (mu, nu) = random_pair(&mut rng, 9, 2, 1.0);
        for p in [1u32, 2] {
            let r = exact_wasserstein(&mu, &nu, p).unwrap();
            let cost: f64 = r
                .plan
                .entries
                .iter()
                .map(|&(i, j, f)| f * pair_cost(mu.position(i), nu.position(j), p))
                .sum();
            let from_plan = root_p(cost, p);
            assert!(
                (r.distance - from_plan).abs() <= 1e-9 * (1.0 + r.distance),
                "p={p}: {} vs {from_plan}",
                r.distance
            );
        }
    }

    #[test]
    fn zero_weight_atoms_are_invisible_to_the_solver() {
        let mu = measure(1, &[(&[0.0], 1.0), (&[10.0], 0.0)]);
        let nu = measure(1, &[(&[1.0], 1.0)]);
        let r = exact_wasserstein(&mu, &nu, 2).unwrap();
        assert!((r.distance - 1.0).abs() < 1e-12);
        assert_eq!(r.plan.entries, vec![(0, 0, 1.0)]);
    }

    #[test]
    fn json_export_shape() {
        let mu = measure(1, &[(&[0.0], 1.0)]);
        let nu = measure(1, &[(&[1.0], 1.0)]);
        let r = exact_wasserstein(&mu, &nu, 2).unwrap();
        let v = r.to_json_value();
        assert_eq!(v["p"], 2);
        assert_eq!(v["solver"], "exact");
        assert_eq!(v["plan"][0][0], 0);
        assert_eq!(v["plan"][0][2], 1.0);
    }

    // -- entropic -----------------------------------------------------------

    #[test]
    fn entropic_identical_measures_near_zero() {
        let mut rng = StdRng::seed_from_u64(301);
        let mut mu = DiscreteMeasure::new(2);
        for _ in 0..10 {
            mu.push(&[rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)], 0.1)
                .unwrap();
        }
        let r = entropic_wasserstein(&mu, &mu, 2, 1e-3, 10_000).unwrap();
        assert_eq!(r.solver, Solver::Entropic);
        assert!(r.distance <= 1e-2, "distance {}", r.distance);
        r.plan.check_feasible(&mu, &mu).unwrap();
    }

    #[test]
    fn entropic_two_diracs_within_one_percent() {
        let mu = measure(2, &[(&[0.0, 0.0], 1.0)]);
        let nu = measure(2, &[(&[1.0, 0.0], 1.0)]);
        for p in [1u32, 2] {
            let r = entropic_wasserstein(&mu, &nu, p, 1e-3, 1000).unwrap();
            assert!((r.distance - 1.0).abs() < 0.01, "p={p}: {}", r.distance);
        }
    }

    #[test]
    fn entropic_sweep_is_monotone_and_above_exact() {
        let mut rng = StdRng::seed_from_u64(4242);
        let (mu, nu) = random_pair(&mut rng, 50, 2, 0.5);
        let exact = exact_wasserstein(&mu, &nu, 2).unwrap().distance;
        let mut previous = f64::INFINITY;
        for eps in [1e-1, 1e-2, 1e-3] {
            let r = entropic_wasserstein(&mu, &nu, 2, eps, 200_000).unwrap();
            r.plan.check_feasible(&mu, &nu).unwrap();
            assert!(
                r.distance >= exact - 1e-9,
                "ε={eps}: {} below exact {exact}",
                r.distance
            );
            assert!(
                r.distance <= previous + 1e-9,
                "ε={eps}: {} above previous {previous}",
                r.distance
            );
            previous = r.distance;
        }
        assert!(previous - exact <= 0.05 * (1.0 + exact));
    }

    #[test]
    fn entropic_dual_is_nondecreasing() {
        let mut rng = StdRng::seed_from_u64(31);
        let (mu, nu) = random_pair(&mut rng, 20, 2, 1.0);
        let (_, duals) = entropic_core(&mu, &nu, 2, 5e-2, 50_000).unwrap();
        assert!(duals.len() >= 2);
        for w in duals.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()),
                "dual decreased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn entropic_divergence_carries_diagnostics() {
        let mut rng = StdRng::seed_from_u64(87);
        let (mu, nu) = random_pair(&mut rng, 20, 2, 1.0);
        let err = entropic_wasserstein(&mu, &nu, 2, 1e-4, 3).unwrap_err();
        match err {
            Error::EntropicDiverged {
                iterations,
                marginal_error,
                dual_value,
            } => {
                assert_eq!(iterations, 3);
                assert!(marginal_error > 1e-8);
                assert!(dual_value.is_finite());
            }
            other => panic!("expected divergence, got {other}"),
        }
    }

    // -- dual Lipschitz distance -------------------------------------------

    /// Dense grid search over candidate φ values: for every atom take an even
    /// grid on [-b, b], keep combinations that satisfy all Lipschitz
    /// constraints exactly, maximize the objective.  A lower bound for the
    /// true optimum, off by at most Σ|mass|·(grid step).
    fn fb_grid_oracle(atoms: &[(Vec<f64>, f64)], ball: &Ball, points: usize) -> (f64, f64) {
        let k = atoms.len();
        let b: Vec<f64> = atoms
            .iter()
            .map(|(x, _)| (ball.radius() - dist(ball.center(), x)).max(0.0))
            .collect();
        let grids: Vec<Vec<f64>> = b
            .iter()
            .map(|&bi| {
                (0..points)
                    .map(|t| -bi + 2.0 * bi * t as f64 / (points - 1) as f64)
                    .collect()
            })
            .collect();
        let pair_dist: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..k).map(|j| dist(&atoms[i].0, &atoms[j].0)).collect())
            .collect();
        let mut idx = vec![0usize; k];
        let mut best = f64::NEG_INFINITY;
        'outer: loop {
            let phi: Vec<f64> = idx.iter().enumerate().map(|(i, &t)| grids[i][t]).collect();
            let mut ok = true;
            'check: for i in 0..k {
                for j in i + 1..k {
                    if (phi[i] - phi[j]).abs() > pair_dist[i][j] + 1e-12 {
                        ok = false;
                        break 'check;
                    }
                }
            }
            if ok {
                let obj: f64 = phi.iter().zip(atoms).map(|(p, (_, m))| p * m).sum();
                best = best.max(obj);
            }
            for i in 0..k {
                idx[i] += 1;
                if idx[i] < points {
                    continue 'outer;
                }
                idx[i] = 0;
            }
            break;
        }
        let slack: f64 = atoms
            .iter()
            .zip(&b)
            .map(|((_, m), &bi)| m.abs() * 2.0 * bi / (points - 1) as f64)
            .sum();
        (best.max(0.0), slack)
    }

    fn split_signed(atoms: &[(Vec<f64>, f64)], dim: usize) -> (DiscreteMeasure, DiscreteMeasure) {
        let mut mu = DiscreteMeasure::new(dim);
        let mut nu = DiscreteMeasure::new(dim);
        for (x, m) in atoms {
            if *m > 0.0 {
                mu.push(x, *m).unwrap();
            } else if *m < 0.0 {
                nu.push(x, -m).unwrap();
            }
        }
        (mu, nu)
    }

    #[test]
    fn fb_identical_measures_zero() {
        let mut rng = StdRng::seed_from_u64(1);
        let (mu, _) = random_pair(&mut rng, 5, 2, 0.5);
        let ball = Ball::new(vec![0.25, 0.25], 1.0).unwrap();
        let v = fb_distance(&mu, &mu, &ball).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn fb_deep_diracs_give_their_distance() {
        let ball = Ball::new(vec![0.0, 0.0], 1.0).unwrap();
        let mu = measure(2, &[(&[0.1, 0.0], 1.0)]);
        let nu = measure(2, &[(&[-0.1, 0.0], 1.0)]);
        let v = fb_distance(&mu, &nu, &ball).unwrap();
        assert!((v - 0.2).abs() < 1e-12, "{v}");
    }

    #[test]
    fn fb_capped_by_boundary_distance() {
        let ball = Ball::new(vec![0.0, 0.0], 1.0).unwrap();
        let mu = measure(2, &[(&[-0.9, 0.0], 1.0)]);
        let nu = measure(2, &[(&[0.9, 0.0], 1.0)]);
        let v = fb_distance(&mu, &nu, &ball).unwrap();
        // φ can differ by at most b(x)+b(y) = 0.2, far below |x−y| = 1.8.
        assert!((v - 0.2).abs() < 1e-12, "{v}");
    }

    #[test]
    fn fb_three_atom_chain() {
        // Atoms at -1/2, 0, 1/2 on the axis of B(0,1), masses +1, -2, +1.
        // Best φ: boundary caps force φ(±1/2) ≥ -1/2 while φ(0) can dive to
        // -1 only if the Lipschitz constraint allows; optimum is 1.
        let ball = Ball::new(vec![0.0, 0.0], 1.0).unwrap();
        let mu = measure(2, &[(&[-0.5, 0.0], 1.0), (&[0.5, 0.0], 1.0)]);
        let nu = measure(2, &[(&[0.0, 0.0], 2.0)]);
        let v = fb_distance(&mu, &nu, &ball).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn fb_unbalanced_same_position() {
        let ball = Ball::new(vec![0.0, 0.0], 2.0).unwrap();
        let mu = measure(2, &[(&[0.0, 0.0], 1.0)]);
        let nu = measure(2, &[(&[0.0, 0.0], 3.0)]);
        let v = fb_distance(&mu, &nu, &ball).unwrap();
        // Net mass 2 at the center, each unit worth b = r = 2.
        assert!((v - 4.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn fb_ignores_atoms_outside_the_ball() {
        let ball = Ball::new(vec![0.0, 0.0], 1.0).unwrap();
        let mu = measure(2, &[(&[0.2, 0.0], 1.0), (&[5.0, 0.0], 7.0)]);
        let nu = measure(2, &[(&[-0.2, 0.0], 1.0), (&[1.0, 0.0], 3.0)]);
        // The far atom and the one exactly on the boundary both carry φ = 0.
        let v = fb_distance(&mu, &nu, &ball).unwrap();
        assert!((v - 0.4).abs() < 1e-12, "{v}");
    }

    #[test]
    fn fb_matches_grid_search_on_small_random_configurations() {
        let mut rng = StdRng::seed_from_u64(0x5eed);
        let ball = Ball::new(vec![0.0, 0.0], 1.0).unwrap();
        for case in 0..20 {
            let k = rng.gen_range(2..=4usize);
            let atoms: Vec<(Vec<f64>, f64)> = (0..k)
                .map(|_| {
                    let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                    let rad = rng.gen_range(0.0..0.9);
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    (
                        vec![rad * ang.cos(), rad * ang.sin()],
                        sign * rng.gen_range(0.2..1.0),
                    )
                })
                .collect();
            let (mu, nu) = split_signed(&atoms, 2);
            if mu.is_empty() && nu.is_empty() {
                continue;
            }
            let got = fb_distance(&mu, &nu, &ball).unwrap();
            let (lower, slack) = fb_grid_oracle(&atoms, &ball, 41);
            assert!(
                got >= lower - 1e-9,
                "case {case}: {got} below grid lower bound {lower}"
            );
            assert!(
                got <= lower + slack + 1e-9,
                "case {case}: {got} above grid bound {lower} + {slack}"
            );
        }
    }

    proptest! {
        #[test]
        fn fb_bounded_by_radius_times_total_mass(seed in 0u64..200) {
            let mut rng = StdRng::seed_from_u64(seed);
            let r = rng.gen_range(0.5..2.0);
            let ball = Ball::new(vec![0.0, 0.0], r).unwrap();
            let mut mu = DiscreteMeasure::new(2);
            let mut nu = DiscreteMeasure::new(2);
            for _ in 0..6 {
                mu.push(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)], rng.gen_range(0.0..1.0)).unwrap();
                nu.push(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)], rng.gen_range(0.0..1.0)).unwrap();
            }
            let v = fb_distance(&mu, &nu, &ball).unwrap();
            prop_assert!(v >= 0.0);
            prop_assert!(v <= r * (mu.total_mass() + nu.total_mass()) + 1e-9);
        }

        #[test]
        fn fb_symmetric(seed in 0u64..100) {
            let mut rng = StdRng::seed_from_u64(seed);
            let ball = Ball::new(vec![0.0, 0.0], 1.0).unwrap();
            let mut mu = DiscreteMeasure::new(2);
            let mut nu = DiscreteMeasure::new(2);
            for _ in 0..4 {
                mu.push(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], rng.gen_range(0.1..1.0)).unwrap();
                nu.push(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], rng.gen_range(0.1..1.0)).unwrap();
            }
            let ab = fb_distance(&mu, &nu, &ball).unwrap();
            let ba = fb_distance(&nu, &mu, &ball).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab.abs()));
        }
    }
}
