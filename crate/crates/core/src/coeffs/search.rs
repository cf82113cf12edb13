//! Plane-fitting machinery shared by the flatness coefficients: weighted PCA
//! for the initial guess, Nelder–Mead over a local chart of the affine
//! Grassmannian for refinement, and a global angle–offset grid for lines in
//! the plane (the one case where local search can realistically be trapped).

use crate::measure::{AffinePlane, Ball};
use crate::vecmath::{dist, norm};
use nalgebra::{DMatrix, SymmetricEigen};

/// Weighted principal plane: weighted mean plus the top-`n` eigenvectors of
/// the weighted covariance.  Falls back to coordinate axes for directions the
/// data does not determine (zero covariance, single atom, ...).  `None` when
/// the total weight vanishes.
pub(super) fn weighted_pca(
    dim: usize,
    n: usize,
    positions: &[f64],
    weights: &[f64],
) -> Option<AffinePlane> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let k = weights.len();
    let mut mean = vec![0.0; dim];
    for i in 0..k {
        for (m, c) in mean.iter_mut().zip(&positions[i * dim..(i + 1) * dim]) {
            *m += weights[i] * c;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..k {
        let x = &positions[i * dim..(i + 1) * dim];
        for a in 0..dim {
            for b in 0..dim {
                cov[(a, b)] += weights[i] * (x[a] - mean[a]) * (x[b] - mean[b]);
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(n);
    for &idx in order.iter().take(n) {
        let col: Vec<f64> = (0..dim).map(|r| eig.eigenvectors[(r, idx)]).collect();
        if norm(&col) > 1e-8 {
            dirs.push(col);
        }
    }
    // Complete with coordinate axes if the eigenbasis came up short (it
    // should not, but degenerate covariances deserve a safety net).
    let mut axis = 0;
    while dirs.len() < n && axis < dim {
        let mut e = vec![0.0; dim];
        e[axis] = 1.0;
        axis += 1;
        let candidate = AffinePlane::new(mean.clone(), &{
            let mut all = dirs.clone();
            all.push(e.clone());
            all
        });
        if candidate.is_ok() {
            dirs.push(e);
        }
    }
    AffinePlane::new(mean, &dirs).ok()
}

/// Translate the plane along its normal direction until it passes within
/// `0.95·r` of the ball center (no-op when it already meets the closed ball).
pub(super) fn clamp_into_ball(plane: &AffinePlane, ball: &Ball) -> AffinePlane {
    let z = ball.center();
    let q = plane.project(z);
    let gap = dist(z, &q);
    if gap <= ball.radius() {
        return plane.clone();
    }
    let pull = 1.0 - 0.95 * ball.radius() / gap;
    let v: Vec<f64> = z.iter().zip(&q).map(|(a, b)| pull * (a - b)).collect();
    plane.translated(&v).expect("dimension preserved")
}

/// Local chart around an initial plane: `n·(d−n)` mixing angles tilting each
/// frame vector toward the orthogonal complement, plus `d−n` offsets moving
/// the base point along the complement.  The chart covers a neighborhood of
/// the initial plane in the affine Grassmannian; re-orthonormalization is
/// delegated to the `AffinePlane` constructor.
pub(super) struct Chart {
    base: Vec<f64>,
    frame: Vec<Vec<f64>>,
    complement: Vec<Vec<f64>>,
    n: usize,
    d: usize,
}

impl Chart {
    pub(super) fn new(init: &AffinePlane) -> Chart {
        Chart {
            base: init.base_point().to_vec(),
            frame: init.frame_rows().map(|r| r.to_vec()).collect(),
            complement: init.orthonormal_complement(),
            n: init.dim_plane(),
            d: init.dim_ambient(),
        }
    }

    pub(super) fn param_count(&self) -> usize {
        self.n * (self.d - self.n) + (self.d - self.n)
    }

    /// The plane at chart coordinates `theta`; `None` when the tilted frame
    /// degenerates (far outside the chart's useful range).
    pub(super) fn plane_at(&self, theta: &[f64]) -> Option<AffinePlane> {
        let c = self.d - self.n;
        let mut dirs = Vec::with_capacity(self.n);
        for (i, u) in self.frame.iter().enumerate() {
            let mut v = u.clone();
            for (a, w) in self.complement.iter().enumerate() {
                let t = theta[i * c + a];
                for (vc, wc) in v.iter_mut().zip(w) {
                    *vc += t * wc;
                }
            }
            dirs.push(v);
        }
        let mut base = self.base.clone();
        for (a, w) in self.complement.iter().enumerate() {
            let t = theta[self.n * c + a];
            for (bc, wc) in base.iter_mut().zip(w) {
                *bc += t * wc;
            }
        }
        AffinePlane::new(base, &dirs).ok()
    }
}

/// Plain Nelder–Mead minimization (reflection/expansion/contraction/shrink
/// with the textbook coefficients), budgeted by objective evaluations.
/// Deterministic: ties in the simplex ordering break by insertion order.
pub(super) fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let dim = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        f(x)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let worst = simplex[dim].clone();
        let mut centroid = vec![0.0; dim];
        for (x, _) in simplex.iter().take(dim) {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / dim as f64;
            }
        }
        let shifted = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = shifted(1.0);
        let vr = eval(&xr, &mut evals);
        if vr < simplex[0].1 {
            let xe = shifted(2.0);
            let ve = eval(&xe, &mut evals);
            simplex[dim] = if ve < vr { (xe, ve) } else { (xr, vr) };
        } else if vr < simplex[dim - 1].1 {
            simplex[dim] = (xr, vr);
        } else {
            let xc = shifted(-0.5);
            let vc = eval(&xc, &mut evals);
            if vc < worst.1 {
                simplex[dim] = (xc, vc);
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = entry
                        .0
                        .iter()
                        .zip(&best)
                        .map(|(a, b)| b + 0.5 * (a - b))
                        .collect();
                    let v = eval(&x, &mut evals);
                    *entry = (x, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    (x, v)
}

/// Global candidate lines for `n = 1`, `d = 2`: 64 directions over a half
/// turn crossed with 32 signed offsets from the ball center.
pub(super) fn line_grid_candidates(ball: &Ball) -> Vec<AffinePlane> {
    debug_assert_eq!(ball.dim(), 2);
    let r = ball.radius();
    let z = ball.center();
    let mut out = Vec::with_capacity(64 * 32);
    for ai in 0..64 {
        let angle = std::f64::consts::PI * ai as f64 / 64.0;
        let dir = vec![angle.cos(), angle.sin()];
        let normal = [-angle.sin(), angle.cos()];
        for oi in 0..32 {
            let s = -r + 2.0 * r * (oi as f64 + 0.5) / 32.0;
            let base = vec![z[0] + s * normal[0], z[1] + s * normal[1]];
            if let Ok(plane) = AffinePlane::new(base, std::slice::from_ref(&dir)) {
                out.push(plane);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pca_recovers_a_sampled_line() {
        // Points on y = x/2 with mild weights: the principal direction must
        // align with (2,1)/√5.
        let mut positions = Vec::new();
        let mut weights = Vec::new();
        for k in 0..50 {
            let t = k as f64 / 10.0;
            positions.extend_from_slice(&[t, t / 2.0]);
            weights.push(1.0 + (k % 3) as f64);
        }
        let plane = weighted_pca(2, 1, &positions, &weights).unwrap();
        let dir = plane.frame_row(0);
        let want = [2.0 / 5.0f64.sqrt(), 1.0 / 5.0f64.sqrt()];
        let align = (dir[0] * want[0] + dir[1] * want[1]).abs();
        assert!(align > 1.0 - 1e-9, "alignment {align}");
        // Every sample point is on the plane.
        assert!(plane.distance(&[2.0, 1.0]) < 1e-9);
    }

    #[test]
    fn pca_single_atom_falls_back_to_axes() {
        let plane = weighted_pca(3, 2, &[1.0, 2.0, 3.0], &[5.0]).unwrap();
        assert_eq!(plane.dim_plane(), 2);
        assert!(plane.distance(&[1.0, 2.0, 3.0]) < 1e-12);
    }

    #[test]
    fn pca_zero_weight_returns_none() {
        assert!(weighted_pca(2, 1, &[0.0, 0.0], &[0.0]).is_none());
    }

    #[test]
    fn chart_at_origin_reproduces_the_plane() {
        let init = AffinePlane::new(vec![1.0, 2.0, 3.0], &[vec![1.0, 1.0, 0.0]]).unwrap();
        let chart = Chart::new(&init);
        assert_eq!(chart.param_count(), 2 + 2);
        let same = chart.plane_at(&vec![0.0; 4]).unwrap();
        assert!(dist(same.base_point(), init.base_point()) < 1e-12);
        assert!((same.frame_row(0)[0] - init.frame_row(0)[0]).abs() < 1e-12);
    }

    #[test]
    fn chart_offsets_move_orthogonally() {
        let init = AffinePlane::coordinate(2, 1);
        let chart = Chart::new(&init);
        // One tilt parameter, one offset parameter.
        let shifted = chart.plane_at(&[0.0, 0.7]).unwrap();
        assert!((shifted.distance(&[0.0, 0.0]) - 0.7).abs() < 1e-12);
        let tilted = chart.plane_at(&[1.0, 0.0]).unwrap();
        // Tilt of 1 mixes equal parts of e1 and e2.
        let d = tilted.frame_row(0);
        assert!((d[0].abs() - d[1].abs()).abs() < 1e-12);
    }

    #[test]
    fn nelder_mead_minimizes_a_quadratic() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2) + 5.0;
        let (x, v) = nelder_mead(f, &[0.0, 0.0], 0.5, 400);
        assert!((x[0] - 3.0).abs() < 1e-4, "{x:?}");
        assert!((x[1] + 1.0).abs() < 1e-4, "{x:?}");
        assert!((v - 5.0).abs() < 1e-7);
    }

    #[test]
    fn clamp_pulls_distant_planes_to_the_ball() {
        let ball = Ball::new(vec![0.0, 0.0], 1.0).unwrap();
        let far = AffinePlane::new(vec![0.0, 5.0], &[vec![1.0, 0.0]]).unwrap();
        let near = clamp_into_ball(&far, &ball);
        assert!(near.distance(&[0.0, 0.0]) <= 0.95 + 1e-12);
        let fine = AffinePlane::new(vec![0.0, 0.5], &[vec![1.0, 0.0]]).unwrap();
        let kept = clamp_into_ball(&fine, &ball);
        assert!(dist(kept.base_point(), fine.base_point()) < 1e-12);
    }

    #[test]
    fn line_grid_covers_directions_and_offsets() {
        let ball = Ball::new(vec![1.0, -1.0], 2.0).unwrap();
        let grid = line_grid_candidates(&ball);
        assert_eq!(grid.len(), 64 * 32);
        // All candidates meet the closed ball.
        for plane in &grid {
            assert!(plane.distance(ball.center()) <= ball.radius() + 1e-12);
        }
    }
}
