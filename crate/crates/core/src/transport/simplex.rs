//! Network simplex for the dense balanced transportation problem.
//!
//! Costs stay in floating point (squared Euclidean distances are irrational,
//! so integerizing would only add error); correctness is established after
//! the fact by a dual-feasibility certificate at `1e-9` relative to the
//! largest cost.  Pricing is block search: arcs are scanned in row-major
//! order from a rolling cursor in windows of about `sqrt(m·n)`, and the most
//! negative reduced cost in the first window that has one enters.  This
//! avoids touching all `m·n` arcs on every pivot while still taking steep
//! steps.  Determinism: the northwest-corner start, the cursor-order pricing
//! with strict comparisons, and the lexicographic leaving-arc rule together
//! make the pivot sequence — and hence the returned plan — a pure function
//! of the input order.  After a run of 50 consecutive degenerate pivots the
//! pricing switches to Bland's rule (first negative arc in lexicographic
//! order), which provably cannot cycle, and switches back on the next real
//! pivot.

use crate::error::{Error, Result};
use crate::vecmath::compensated_sum;
use std::collections::HashMap;

/// Solved transportation instance: strictly positive flows, total cost, and
/// the cost magnitude used to scale tolerances.
#[derive(Debug)]
pub(crate) struct Solution {
    /// `(source, target, mass)` with `mass > 0`, sorted by `(source, target)`.
    pub entries: Vec<(usize, usize, f64)>,
    pub cost: f64,
}

const DEGENERATE_RUN_LIMIT: u32 = 50;

/// Minimize `Σ flow(i,j)·cost(i,j)` over nonnegative flows with row sums
/// `supply` and column sums `demand`.
///
/// Supplies and demands must be strictly positive; the totals may disagree
/// by at most `1e-9` relative (the imbalance is folded into the last demand
/// entry, so marginal checks downstream should use the same tolerance).
pub(crate) fn solve<F: Fn(usize, usize) -> f64>(
    supply: &[f64],
    demand: &[f64],
    cost: F,
) -> Result<Solution> {
    let m = supply.len();
    let n = demand.len();
    if m == 0 {
        return Err(Error::EmptyMeasure("transport source side has no atoms"));
    }
    if n == 0 {
        return Err(Error::EmptyMeasure("transport target side has no atoms"));
    }
    debug_assert!(supply.iter().all(|&s| s > 0.0));
    debug_assert!(demand.iter().all(|&d| d > 0.0));

    let sa = compensated_sum(supply.iter().copied());
    let sb = compensated_sum(demand.iter().copied());
    if (sa - sb).abs() > 1e-9 * sa.max(sb) {
        return Err(Error::MassMismatch { mu: sa, nu: sb });
    }
    // Fold the (tiny) imbalance into one demand entry so the instance is
    // exactly balanced for the flow recursion.  Prefer the last entry; fall
    // back to the largest if the last one is too small to absorb it.
    let mut demand = demand.to_vec();
    let delta = sa - sb;
    let k = if demand[n - 1] + delta > 0.0 {
        n - 1
    } else {
        let (k, _) = demand
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        k
    };
    demand[k] += delta;

    let scale = {
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in 0..n {
                worst = worst.max(cost(i, j).abs());
            }
        }
        worst.max(1e-300)
    };
    let enter_tol = 1e-11 * scale;
    let cert_tol = 1e-9 * scale;

    let mut state = Tree::northwest(m, n, supply, &demand);
    state.refresh(&cost);

    let pivot_cap = 200 * (m + n) + 10_000;
    let mut pivots = 0usize;
    let mut degenerate_run = 0u32;
    let mut bland = false;

    loop {
        let entering = if bland {
            state.price_bland(&cost, enter_tol)
        } else {
            state.price_block(&cost, enter_tol)
        };
        let Some((ei, ej)) = entering else { break };
        if pivots >= pivot_cap {
            return Err(Error::Certificate(format!(
                "pivot limit {pivot_cap} exceeded (m={m}, n={n})"
            )));
        }
        pivots += 1;
        let theta = state.pivot(ei, ej);
        if theta == 0.0 {
            degenerate_run += 1;
            if degenerate_run >= DEGENERATE_RUN_LIMIT {
                bland = true;
            }
        } else {
            degenerate_run = 0;
            bland = false;
        }
        state.refresh(&cost);
    }

    // Optimality certificate: dual feasibility everywhere, complementary
    // slackness on the basis, and marginal feasibility of the plan.
    for i in 0..m {
        for j in 0..n {
            let red = cost(i, j) - state.pot[i] - state.pot[m + j];
            if red < -cert_tol {
                return Err(Error::Certificate(format!(
                    "reduced cost {red:.3e} at ({i},{j}) below -{cert_tol:.3e}"
                )));
            }
        }
    }
    let mut row = vec![0.0; m];
    let mut col = vec![0.0; n];
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(m + n);
    for (&(s, t), &f) in &state.flows {
        let (i, j) = (s as usize, t as usize - m);
        let red = cost(i, j) - state.pot[i] - state.pot[m + j];
        if red.abs() > cert_tol {
            return Err(Error::Certificate(format!(
                "basic arc ({i},{j}) has reduced cost {red:.3e}"
            )));
        }
        row[i] += f;
        col[j] += f;
        if f > 0.0 {
            entries.push((i, j, f));
        }
    }
    for i in 0..m {
        if (row[i] - supply[i]).abs() > 1e-9 * supply[i].max(1.0) {
            return Err(Error::Certificate(format!(
                "row {i} ships {} against supply {}",
                row[i], supply[i]
            )));
        }
    }
    for j in 0..n {
        if (col[j] - demand[j]).abs() > 1e-9 * demand[j].max(1.0) {
            return Err(Error::Certificate(format!(
                "column {j} receives {} against demand {}",
                col[j], demand[j]
            )));
        }
    }

    entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let cost_total = compensated_sum(entries.iter().map(|&(i, j, f)| f * cost(i, j)));
    Ok(Solution {
        entries,
        cost: cost_total.max(0.0),
    })
}

/// Spanning-tree state of the simplex: basic arcs with their flows, plus the
/// parent/depth/potential arrays refreshed by a DFS from node 0 after every
/// structural change.  Nodes `0..m` are sources, `m..m+n` sinks; every tree
/// edge joins a source to a sink, so `(source_node, sink_node)` is a
/// canonical, orientation-free key.
struct Tree {
    m: usize,
    n: usize,
    flows: HashMap<(u32, u32), f64>,
    adj: Vec<Vec<u32>>,
    parent: Vec<u32>,
    depth: Vec<u32>,
    pot: Vec<f64>,
    /// Row-major arc index where the next block-pricing scan resumes.
    cursor: usize,
}

impl Tree {
    /// Northwest-corner initial basis: exactly `m+n-1` arcs forming a
    /// staircase spanning tree (zero-flow arcs appear when a supply and a
    /// demand run out simultaneously).  On inputs whose atoms are sorted
    /// along a common line this is already the optimal monotone coupling,
    /// so the pivot loop typically certifies immediately.
    fn northwest(m: usize, n: usize, supply: &[f64], demand: &[f64]) -> Tree {
        let mut flows = HashMap::with_capacity(m + n);
        let mut adj = vec![Vec::new(); m + n];
        let (mut i, mut j) = (0usize, 0usize);
        let mut ra = supply[0];
        let mut rb = demand[0];
        loop {
            let f = ra.min(rb).max(0.0);
            flows.insert((i as u32, (m + j) as u32), f);
            adj[i].push((m + j) as u32);
            adj[m + j].push(i as u32);
            if i + 1 == m && j + 1 == n {
                break;
            }
            if (ra <= rb && i + 1 < m) || j + 1 == n {
                rb -= f;
                i += 1;
                ra = supply[i];
            } else {
                ra -= f;
                j += 1;
                rb = demand[j];
            }
        }
        Tree {
            m,
            n,
            flows,
            adj,
            parent: vec![u32::MAX; m + n],
            depth: vec![0; m + n],
            pot: vec![0.0; m + n],
            cursor: 0,
        }
    }

    /// Recompute parents, depths and dual potentials by a DFS from node 0.
    /// `O(m + n)` per call — once per pivot.
    fn refresh<F: Fn(usize, usize) -> f64>(&mut self, cost: &F) {
        let total = self.m + self.n;
        self.parent.iter_mut().for_each(|p| *p = u32::MAX);
        let mut seen = vec![false; total];
        let mut stack = Vec::with_capacity(total);
        stack.push(0u32);
        seen[0] = true;
        self.depth[0] = 0;
        self.pot[0] = 0.0;
        while let Some(u) = stack.pop() {
            let ui = u as usize;
            for idx in 0..self.adj[ui].len() {
                let v = self.adj[ui][idx];
                let vi = v as usize;
                if seen[vi] {
                    continue;
                }
                seen[vi] = true;
                self.parent[vi] = u;
                self.depth[vi] = self.depth[ui] + 1;
                let (s, t) = if ui < self.m { (ui, vi) } else { (vi, ui) };
                self.pot[vi] = cost(s, t - self.m) - self.pot[ui];
                stack.push(v);
            }
        }
        debug_assert!(seen.iter().all(|&s| s), "basis is not a spanning tree");
    }

    /// Block pricing: scan row-major from the cursor in windows of about
    /// `sqrt(m·n)` arcs, and return the most negative reduced cost in the
    /// first window containing one.  Strict comparisons keep the earliest
    /// arc in scan order among exact ties; returning `None` means a full
    /// wrap found nothing below `-tol`, i.e. dual feasibility.
    fn price_block<F: Fn(usize, usize) -> f64>(
        &mut self,
        cost: &F,
        tol: f64,
    ) -> Option<(usize, usize)> {
        let arcs = self.m * self.n;
        let block = (arcs as f64).sqrt() as usize + 1;
        let mut i = self.cursor / self.n;
        let mut j = self.cursor % self.n;
        let mut best = -tol;
        let mut arg = None;
        let mut scanned = 0usize;
        while scanned < arcs {
            let window = block.min(arcs - scanned);
            for _ in 0..window {
                let red = cost(i, j) - self.pot[i] - self.pot[self.m + j];
                if red < best {
                    best = red;
                    arg = Some((i, j));
                }
                j += 1;
                if j == self.n {
                    j = 0;
                    i += 1;
                    if i == self.m {
                        i = 0;
                    }
                }
            }
            scanned += window;
            if arg.is_some() {
                self.cursor = i * self.n + j;
                return arg;
            }
        }
        None
    }

    /// First arc with negative reduced cost in lexicographic order.
    fn price_bland<F: Fn(usize, usize) -> f64>(
        &self,
        cost: &F,
        tol: f64,
    ) -> Option<(usize, usize)> {
        for i in 0..self.m {
            let ui = self.pot[i];
            for j in 0..self.n {
                if cost(i, j) - ui - self.pot[self.m + j] < -tol {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Bring arc `(ei, ej)` into the basis.  Returns the amount of mass
    /// rerouted (0 for a degenerate pivot).
    fn pivot(&mut self, ei: usize, ej: usize) -> f64 {
        let a = ei as u32;
        let b = (self.m + ej) as u32;

        // Node path from b back to a through the tree (walk both endpoints
        // to their lowest common ancestor).
        let mut up_b = vec![b];
        let mut up_a = vec![a];
        let (mut x, mut y) = (b, a);
        while self.depth[x as usize] > self.depth[y as usize] {
            x = self.parent[x as usize];
            up_b.push(x);
        }
        while self.depth[y as usize] > self.depth[x as usize] {
            y = self.parent[y as usize];
            up_a.push(y);
        }
        while x != y {
            x = self.parent[x as usize];
            up_b.push(x);
            y = self.parent[y as usize];
            up_a.push(y);
        }
        up_a.pop(); // drop the shared LCA once
        let mut path = up_b;
        path.extend(up_a.into_iter().rev());

        // Entering arc gains mass; walking the path from b to a the tree
        // edges alternate -θ, +θ, -θ, ... (the cycle alternates sides, so
        // conservation fixes the signs).
        let mut minus_edges: Vec<(u32, u32)> = Vec::new();
        for (t, pair) in path.windows(2).enumerate() {
            if t % 2 == 0 {
                let key = canonical(self.m, pair[0], pair[1]);
                minus_edges.push(key);
            }
        }
        let theta = minus_edges
            .iter()
            .map(|k| self.flows[k])
            .fold(f64::INFINITY, f64::min);
        // Leaving arc: lexicographically least among the minus-edges at the
        // minimum (total order on arcs — the choice Bland's rule needs).
        let leaving = *minus_edges
            .iter()
            .filter(|k| self.flows[*k] <= theta)
            .min()
            .expect("cycle has at least one reverse edge");

        for (t, pair) in path.windows(2).enumerate() {
            let key = canonical(self.m, pair[0], pair[1]);
            let f = self.flows.get_mut(&key).unwrap();
            if t % 2 == 0 {
                *f = (*f - theta).max(0.0);
            } else {
                *f += theta;
            }
        }

        self.flows.remove(&leaving);
        detach(&mut self.adj, leaving.0, leaving.1);
        self.flows.insert((a, b), theta);
        self.adj[a as usize].push(b);
        self.adj[b as usize].push(a);
        theta
    }
}

fn canonical(m: usize, u: u32, v: u32) -> (u32, u32) {
    if (u as usize) < m {
        (u, v)
    } else {
        (v, u)
    }
}

fn detach(adj: &mut [Vec<u32>], s: u32, t: u32) {
    adj[s as usize].retain(|&x| x != t);
    adj[t as usize].retain(|&x| x != s);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense<'a>(costs: &'a [&'a [f64]]) -> impl Fn(usize, usize) -> f64 + 'a {
        move |i, j| costs[i][j]
    }

    fn total_cost(sol: &Solution) -> f64 {
        sol.cost
    }

    /// Exhaustive optimum for instances with small integer supplies/demands:
    /// every unit is assigned independently, so the optimum is the
    /// assignment-problem optimum over unit splits.
    fn brute_units(supply: &[usize], demand: &[usize], costs: &[&[f64]]) -> f64 {
        let mut units_src = Vec::new();
        for (i, &s) in supply.iter().enumerate() {
            for _ in 0..s {
                units_src.push(i);
            }
        }
        let mut units_dst = Vec::new();
        for (j, &d) in demand.iter().enumerate() {
            for _ in 0..d {
                units_dst.push(j);
            }
        }
        assert_eq!(units_src.len(), units_dst.len());
        let k = units_src.len();
        let mut used = vec![false; k];
        let mut best = f64::INFINITY;
        fn rec(
            level: usize,
            acc: f64,
            used: &mut [bool],
            best: &mut f64,
            src: &[usize],
            dst: &[usize],
            costs: &[&[f64]],
        ) {
            if acc >= *best {
                return;
            }
            if level == src.len() {
                *best = acc;
                return;
            }
            for t in 0..used.len() {
                if !used[t] {
                    used[t] = true;
                    rec(
                        level + 1,
                        acc + costs[src[level]][dst[t]],
                        used,
                        best,
                        src,
                        dst,
                        costs,
                    );
                    used[t] = false;
                }
            }
        }
        rec(0, 0.0, &mut used, &mut best, &units_src, &units_dst, costs);
        best
    }

    #[test]
    fn single_arc() {
        let sol = solve(&[2.0], &[2.0], |_, _| 3.5).unwrap();
        assert_eq!(sol.entries, vec![(0, 0, 2.0)]);
        assert!((total_cost(&sol) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_cross_is_fixed() {
        // Northwest corner starts on the diagonal, which is the wrong
        // matching here; the pivot loop must reroute everything.
        let costs: &[&[f64]] = &[&[10.0, 1.0], &[1.0, 10.0]];
        let sol = solve(&[1.0, 1.0], &[1.0, 1.0], dense(costs)).unwrap();
        assert!((total_cost(&sol) - 2.0).abs() < 1e-9);
        assert_eq!(sol.entries, vec![(0, 1, 1.0), (1, 0, 1.0)]);
    }

    #[test]
    fn matches_unit_enumeration_on_random_instances() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(0xfeed);
        for case in 0..30 {
            let m = rng.gen_range(1..=4usize);
            let n = rng.gen_range(1..=4usize);
            let mut supply: Vec<usize> = (0..m).map(|_| rng.gen_range(1..=3)).collect();
            let mut demand: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
            // Balance by padding the last entry.
            let (sa, sb) = (
                supply.iter().sum::<usize>(),
                demand.iter().sum::<usize>(),
            );
            if sa > sb {
                demand[n - 1] += sa - sb;
            } else {
                supply[m - 1] += sb - sa;
            }
            if supply.iter().sum::<usize>() > 9 {
                continue; // keep the enumeration cheap
            }
            let cost_rows: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..n).map(|_| rng.gen_range(0.0..5.0)).collect())
                .collect();
            let cost_refs: Vec<&[f64]> = cost_rows.iter().map(|r| r.as_slice()).collect();
            let supply_f: Vec<f64> = supply.iter().map(|&s| s as f64).collect();
            let demand_f: Vec<f64> = demand.iter().map(|&d| d as f64).collect();
            let sol = solve(&supply_f, &demand_f, dense(&cost_refs)).unwrap();
            let want = brute_units(&supply, &demand, &cost_refs);
            assert!(
                (total_cost(&sol) - want).abs() < 1e-9 * (1.0 + want),
                "case {case}: solver {} vs enumeration {want}",
                total_cost(&sol)
            );
        }
    }

    #[test]
    fn degenerate_supplies_terminate() {
        // Equal supplies and demands produce zero-flow basic arcs at every
        // corner step; the solver must still terminate and certify.
        let costs: &[&[f64]] = &[
            &[1.0, 2.0, 3.0],
            &[2.0, 1.0, 2.0],
            &[3.0, 2.0, 1.0],
        ];
        let sol = solve(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], dense(costs)).unwrap();
        assert!((total_cost(&sol) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn mass_mismatch_rejected() {
        let err = solve(&[1.0], &[1.1], |_, _| 1.0).unwrap_err();
        assert!(matches!(err, Error::MassMismatch { .. }));
    }

    #[test]
    fn deterministic_plans() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(3);
        let costs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..6).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let cost_refs: Vec<&[f64]> = costs.iter().map(|r| r.as_slice()).collect();
        let supply = vec![0.3, 0.7, 1.1, 0.2, 0.7];
        let demand = vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5];
        let a = solve(&supply, &demand, dense(&cost_refs)).unwrap();
        let b = solve(&supply, &demand, dense(&cost_refs)).unwrap();
        assert_eq!(a.entries, b.entries);
        assert_eq!(a.cost, b.cost);
    }
}
