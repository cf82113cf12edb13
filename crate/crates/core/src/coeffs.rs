//! Flatness coefficients and their dyadic square functions.
//!
//! Every coefficient here measures, in one way or another, how far a measure
//! is from looking like `n`-dimensional Lebesgue measure on an affine plane
//! at a given location and scale:
//!
//! * `alpha_p_given_plane` / [`best_plane`] — transport distance from the
//!   cutoff-localized measure to a mass-matched flat quadrature, normalized
//!   to be scale-free.
//! * [`beta_p`] — plain `L^p` average of distances to a plane over a sharp
//!   ball (one-sided: blind to holes in the support).
//! * [`bilateral_beta2`] — the two-term variant that also charges the plane
//!   for running through regions with no support nearby.
//! * [`tolsa_alpha`] — dual-Lipschitz (bounded-by-distance-to-complement)
//!   distance to the closest multiple of flat measure, with the multiple
//!   chosen by an inner one-dimensional minimization.
//! * delta — density-ratio jump between consecutive scales, re-exported from
//!   [`crate::measure`].
//!
//! [`square_function`] evaluates any of these down a dyadic scale ladder
//! `r_k = r₀·2^{−k}` and accumulates `Σ value²·ln 2`, the discrete stand-in
//! for `∫ value(r)² dr/r`.

mod search;

use std::f64::consts::LN_2;
use std::str::FromStr;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::measure::{
    cutoff_value, delta_coefficient, weighted_restrict, AffinePlane, Ball, DiscreteMeasure,
    RestrictMode,
};
use crate::transport::{exact_wasserstein, fb_distance};
use crate::vecmath::compensated_sum;

/// Knobs for the plane searches.  The quadrature spacing is expressed as a
/// fraction of the ball radius so that profiles over shrinking scales keep a
/// constant relative resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Spacing of flat quadratures as a fraction of `r(B)`; must be ≤ 1/4.
    pub quad_spacing_frac: f64,
    /// Objective-evaluation budget for the Nelder–Mead refinement stage;
    /// 0 disables refinement and keeps the PCA plane (plus grid fallback).
    pub refine_evals: usize,
    /// For lines in the plane (`n = 1`, `d = 2`), also sweep a global
    /// 64×32 angle–offset grid with a coarse surrogate objective.  Local
    /// search alone can stall on multi-modal instances there.
    pub grid_fallback: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            quad_spacing_frac: 1.0 / 64.0,
            refine_evals: 160,
            grid_fallback: true,
        }
    }
}

/// Which stage of the search produced the reported plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    PcaInit,
    Refined,
    Grid,
}

impl FitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FitMethod::PcaInit => "pca_init",
            FitMethod::Refined => "refined",
            FitMethod::Grid => "grid",
        }
    }
}

/// Outcome of a plane search: the plane, the coefficient value there, and
/// which search stage won.
#[derive(Debug, Clone)]
pub struct PlaneFit {
    pub plane: AffinePlane,
    pub value: f64,
    pub method: FitMethod,
}

fn check_p(p: u32) -> Result<()> {
    if p == 1 || p == 2 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "p",
            reason: format!("only p = 1 and p = 2 are supported, got {p}"),
        })
    }
}

fn check_spacing(h: f64, radius: f64) -> Result<()> {
    if !(h.is_finite() && h > 0.0 && h <= radius / 4.0) {
        return Err(Error::InvalidParameter {
            name: "spacing",
            reason: format!("spacing {h} must lie in (0, r/4] for r = {radius}"),
        });
    }
    Ok(())
}

fn check_plane_ambient(l: &AffinePlane, dim: usize) -> Result<()> {
    if l.dim_ambient() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: l.dim_ambient(),
        });
    }
    Ok(())
}

/// Walk the grid `q₀ + Σ (kᵢ+½)·h·frameᵢ`, `|kᵢ| ≤ kmax`, where `q₀` is the
/// projection of `center` onto the plane.  The half-offset anchoring keeps
/// nodes symmetric about `q₀` and off the cell boundaries.
fn visit_grid_nodes(
    l: &AffinePlane,
    center: &[f64],
    reach: f64,
    h: f64,
    mut visit: impl FnMut(&[f64]),
) -> Result<()> {
    let n = l.dim_plane();
    let q0 = l.project(center);
    let kmax = (reach / h).ceil() as i64;
    let side = 2 * kmax + 1;
    let total = (side as f64).powi(n as i32);
    if total > 2e7 {
        return Err(Error::InvalidParameter {
            name: "spacing",
            reason: format!("grid would hold {total:.0} nodes; refusing beyond 2e7"),
        });
    }
    let side = side as usize;
    let mut node = vec![0.0; l.dim_ambient()];
    let mut index = vec![0usize; n];
    for flat in 0..side.pow(n as u32) {
        let mut rem = flat;
        for slot in index.iter_mut() {
            *slot = rem % side;
            rem /= side;
        }
        node.copy_from_slice(&q0);
        for (axis, &slot) in index.iter().enumerate() {
            let t = (slot as i64 - kmax) as f64 + 0.5;
            let row = l.frame_row(axis);
            for (nc, rc) in node.iter_mut().zip(row) {
                *nc += t * h * rc;
            }
        }
        visit(&node);
    }
    Ok(())
}

/// Quadrature of `φ_B·H^n|_L`: grid nodes on `L ∩ 3B` carrying `hⁿ·φ_B(node)`.
/// The total mass converges to `∫ φ_B dH^n|_L` as `h → 0`.
pub fn flat_quadrature(l: &AffinePlane, ball: &Ball, h: f64) -> Result<DiscreteMeasure> {
    check_plane_ambient(l, ball.dim())?;
    check_spacing(h, ball.radius())?;
    let gap = l.distance(ball.center());
    let outer = 3.0 * ball.radius();
    if gap >= outer {
        return Err(Error::NoIntersection(format!(
            "plane at distance {gap:.6e} from the center misses 3B (radius {outer:.6e})"
        )));
    }
    let n = l.dim_plane();
    let reach = (outer * outer - gap * gap).sqrt();
    let cell = h.powi(n as i32);
    let mut out = DiscreteMeasure::new(ball.dim());
    visit_grid_nodes(l, ball.center(), reach, h, |node| {
        let phi = cutoff_value(ball, node);
        if phi > 0.0 {
            out.push_unchecked(node, cell * phi);
        }
    })?;
    Ok(out)
}

/// Plain quadrature of `H^n|_L` over `L ∩ ball`: grid nodes strictly inside
/// the ball, each carrying `hⁿ`.  Same anchoring as [`flat_quadrature`], so
/// the two produce bit-identical node positions for concentric balls.
pub fn plane_quadrature(l: &AffinePlane, ball: &Ball, h: f64) -> Result<DiscreteMeasure> {
    check_plane_ambient(l, ball.dim())?;
    check_spacing(h, ball.radius())?;
    let gap = l.distance(ball.center());
    if gap >= ball.radius() {
        return Err(Error::NoIntersection(format!(
            "plane at distance {gap:.6e} from the center misses the ball (radius {:.6e})",
            ball.radius()
        )));
    }
    let n = l.dim_plane();
    let reach = (ball.radius() * ball.radius() - gap * gap).sqrt();
    let cell = h.powi(n as i32);
    let mut out = DiscreteMeasure::new(ball.dim());
    visit_grid_nodes(l, ball.center(), reach, h, |node| {
        if ball.contains(node) {
            out.push_unchecked(node, cell);
        }
    })?;
    Ok(out)
}

fn root_p(value: f64, p: u32) -> f64 {
    match p {
        1 => value,
        _ => value.sqrt(),
    }
}

/// Transport flatness at a fixed plane:
/// `W_p(φ_B μ, a·φ_B H^n|_L) / (r · μ(B)^{1/p})` with `a` chosen so the two
/// sides carry exactly the same mass.
pub fn alpha_p_given_plane(
    mu: &DiscreteMeasure,
    ball: &Ball,
    l: &AffinePlane,
    p: u32,
    h: f64,
) -> Result<f64> {
    check_p(p)?;
    check_plane_ambient(l, mu.dim())?;
    if ball.dim() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: ball.dim(),
        });
    }
    let sharp = mu.ball_mass(ball);
    if !(sharp > 0.0) {
        return Err(Error::UndefinedCoefficient(format!(
            "mu(B) = {sharp} at center {:?}, radius {}",
            ball.center(),
            ball.radius()
        )));
    }
    let gap = l.distance(ball.center());
    if gap > ball.radius() {
        return Err(Error::NoIntersection(format!(
            "plane at distance {gap:.6e} does not meet the closed ball (radius {:.6e})",
            ball.radius()
        )));
    }
    let cut = weighted_restrict(mu, ball, RestrictMode::Cutoff);
    let flat = flat_quadrature(l, ball, h)?;
    let flat_mass = flat.total_mass();
    if !(flat_mass > 0.0) {
        return Err(Error::NoIntersection(
            "flat quadrature on L ∩ 3B came out empty".into(),
        ));
    }
    let a = cut.total_mass() / flat_mass;
    let result = exact_wasserstein(&cut, &flat.scaled(a), p)?;
    Ok(result.distance / (ball.radius() * root_p(sharp, p)))
}

/// An `n`-plane through `center` spanned by the first `n` coordinate axes —
/// the fallback initial plane when PCA has nothing to work with.
fn axis_plane(center: &[f64], n: usize) -> AffinePlane {
    let d = center.len();
    let dirs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            e
        })
        .collect();
    AffinePlane::new(center.to_vec(), &dirs).expect("coordinate axes are orthonormal")
}

fn atoms_flat(m: &DiscreteMeasure) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::with_capacity(m.len() * m.dim());
    let mut w = Vec::with_capacity(m.len());
    for (p, wt) in m.iter() {
        pos.extend_from_slice(p);
        w.push(wt);
    }
    (pos, w)
}

/// Three-stage minimization over `n`-planes meeting the closed ball: PCA
/// init, Nelder–Mead over a local chart, and (for lines in the plane) the
/// global grid driven by the cheap surrogate.  The returned value never
/// exceeds the value at the PCA plane.
fn search_plane(
    ball: &Ball,
    n: usize,
    pca_positions: &[f64],
    pca_weights: &[f64],
    cfg: &SearchConfig,
    full: &mut dyn FnMut(&AffinePlane) -> f64,
    cheap: &mut dyn FnMut(&AffinePlane) -> f64,
) -> Result<PlaneFit> {
    let d = ball.dim();
    if n == 0 || n > d {
        return Err(Error::InvalidParameter {
            name: "plane_dim",
            reason: format!("plane dimension {n} must lie in 1..={d}"),
        });
    }
    let init = search::weighted_pca(d, n, pca_positions, pca_weights)
        .map(|p| search::clamp_into_ball(&p, ball))
        .unwrap_or_else(|| axis_plane(ball.center(), n));
    let mut best = PlaneFit {
        value: full(&init),
        plane: init.clone(),
        method: FitMethod::PcaInit,
    };

    // n = d leaves a unique plane (the whole space); nothing to search.
    if cfg.refine_evals > 0 && n < d {
        let chart = search::Chart::new(&init);
        let dim = chart.param_count();
        let offset_base = n * (d - n);
        let r = ball.radius();
        let z = ball.center();
        let mut objective = |theta: &[f64]| -> f64 {
            let mut phys = theta.to_vec();
            // Offsets are dimensionless in the simplex; scale to lengths.
            for t in phys[offset_base..].iter_mut() {
                *t *= r;
            }
            match chart.plane_at(&phys) {
                None => f64::INFINITY,
                Some(plane) => {
                    let gap = plane.distance(z);
                    if gap > r {
                        // Steer back toward planes meeting the closed ball
                        // without paying for a transport solve out there.
                        1e9 * (1.0 + (gap - r) / r)
                    } else {
                        full(&plane)
                    }
                }
            }
        };
        let (theta, value) = search::nelder_mead(
            &mut objective,
            &vec![0.0; dim],
            0.2,
            cfg.refine_evals,
        );
        if value < best.value {
            let mut phys = theta;
            for t in phys[offset_base..].iter_mut() {
                *t *= r;
            }
            if let Some(plane) = chart.plane_at(&phys) {
                best = PlaneFit {
                    plane,
                    value,
                    method: FitMethod::Refined,
                };
            }
        }
    }

    if cfg.grid_fallback && n == 1 && d == 2 {
        let mut leader: Option<(f64, AffinePlane)> = None;
        for cand in search::line_grid_candidates(ball) {
            let v = cheap(&cand);
            if leader.as_ref().map_or(true, |(lv, _)| v < *lv) {
                leader = Some((v, cand));
            }
        }
        if let Some((_, plane)) = leader {
            let value = full(&plane);
            if value < best.value {
                best = PlaneFit {
                    plane,
                    value,
                    method: FitMethod::Grid,
                };
            }
        }
    }
    Ok(best)
}

/// Minimize `alpha_p_given_plane` over `n`-planes meeting the closed ball.
pub fn best_plane(
    mu: &DiscreteMeasure,
    ball: &Ball,
    n: usize,
    p: u32,
    cfg: &SearchConfig,
) -> Result<PlaneFit> {
    check_p(p)?;
    if ball.dim() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: ball.dim(),
        });
    }
    let sharp = mu.ball_mass(ball);
    if !(sharp > 0.0) {
        return Err(Error::UndefinedCoefficient(format!(
            "mu(B) = {sharp}: the alpha infimum needs positive sharp mass"
        )));
    }
    let r = ball.radius();
    let h_full = cfg.quad_spacing_frac * r;
    check_spacing(h_full, r)?;
    let h_cheap = h_full.max(r / 8.0);
    let cut = weighted_restrict(mu, ball, RestrictMode::Cutoff);
    let (pos, w) = atoms_flat(&cut);
    let mut full =
        |l: &AffinePlane| alpha_p_given_plane(mu, ball, l, p, h_full).unwrap_or(f64::INFINITY);
    let mut cheap =
        |l: &AffinePlane| alpha_p_given_plane(mu, ball, l, p, h_cheap).unwrap_or(f64::INFINITY);
    search_plane(ball, n, &pos, &w, cfg, &mut full, &mut cheap)
}

/// `alpha_2` evaluated at a caller-fixed reference plane (typically the best
/// plane of a companion measure) instead of the minimizing plane.
pub fn alpha_hat(
    nu: &DiscreteMeasure,
    ball: &Ball,
    l_ref: &AffinePlane,
    h: f64,
) -> Result<f64> {
    alpha_p_given_plane(nu, ball, l_ref, 2, h)
}

/// `((1/rⁿ) ∫_{B(x,r)} (dist(y,L)/r)^p dμ)^{1/p}` at a fixed plane.  Total:
/// an empty ball integrates to zero.
pub fn beta_p_given_plane(
    mu: &DiscreteMeasure,
    x: &[f64],
    r: f64,
    p: u32,
    l: &AffinePlane,
) -> Result<f64> {
    check_p(p)?;
    check_plane_ambient(l, mu.dim())?;
    if x.len() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: x.len(),
        });
    }
    let ball = Ball::new(x.to_vec(), r)?;
    let n = l.dim_plane();
    let terms: Vec<f64> = mu
        .iter()
        .filter(|(pos, w)| *w > 0.0 && ball.contains(pos))
        .map(|(pos, w)| w * (l.distance(pos) / r).powi(p as i32))
        .collect();
    let integral = compensated_sum(terms) / r.powi(n as i32);
    Ok(root_p(integral, p))
}

/// One-sided flatness: the infimum of [`beta_p_given_plane`] over `n`-planes
/// meeting the closed ball; zero when the ball carries no mass.
pub fn beta_p(
    mu: &DiscreteMeasure,
    x: &[f64],
    r: f64,
    p: u32,
    n: usize,
    cfg: &SearchConfig,
) -> Result<f64> {
    check_p(p)?;
    if x.len() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: x.len(),
        });
    }
    let ball = Ball::new(x.to_vec(), r)?;
    if !(mu.ball_mass(&ball) > 0.0) {
        return Ok(0.0);
    }
    let sharp = weighted_restrict(mu, &ball, RestrictMode::Sharp);
    let (pos, w) = atoms_flat(&sharp);
    let mut full = |l: &AffinePlane| beta_p_given_plane(mu, x, r, p, l).unwrap_or(f64::INFINITY);
    let mut cheap = |l: &AffinePlane| beta_p_given_plane(mu, x, r, p, l).unwrap_or(f64::INFINITY);
    Ok(search_plane(&ball, n, &pos, &w, cfg, &mut full, &mut cheap)?.value)
}

/// Two-term flatness at a fixed plane: distances from the measure to the
/// plane plus distances from a quadrature of `L ∩ B(x,r)` back to the
/// support, both squared, summed under a single `1/rⁿ` prefactor, rooted.
pub fn bilateral_beta2_given_plane(
    mu: &DiscreteMeasure,
    x: &[f64],
    r: f64,
    n: usize,
    l: &AffinePlane,
    h: f64,
) -> Result<f64> {
    check_plane_ambient(l, mu.dim())?;
    if x.len() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: x.len(),
        });
    }
    if l.dim_plane() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: l.dim_plane(),
        });
    }
    if mu.dist_to_support(x).is_none() {
        return Err(Error::EmptyMeasure(
            "bilateral beta needs a measure with support",
        ));
    }
    let ball = Ball::new(x.to_vec(), r)?;
    let measure_terms: Vec<f64> = mu
        .iter()
        .filter(|(pos, w)| *w > 0.0 && ball.contains(pos))
        .map(|(pos, w)| w * (l.distance(pos) / r).powi(2))
        .collect();
    let measure_side = compensated_sum(measure_terms);
    // A plane tangent to the ball has a measure-zero chord: the second
    // integral is genuinely zero there, so an empty quadrature is fine.
    let plane_side = if l.distance(x) < r {
        let quad = plane_quadrature(l, &ball, h)?;
        let terms: Vec<f64> = quad
            .iter()
            .map(|(pos, w)| {
                let d = mu.dist_to_support(pos).expect("support checked above");
                w * (d / r).powi(2)
            })
            .collect();
        compensated_sum(terms)
    } else {
        0.0
    };
    Ok(((measure_side + plane_side) / r.powi(n as i32)).sqrt())
}

/// Infimum of [`bilateral_beta2_given_plane`] over `n`-planes meeting the
/// closed ball.
pub fn bilateral_beta2(
    mu: &DiscreteMeasure,
    x: &[f64],
    r: f64,
    n: usize,
    cfg: &SearchConfig,
) -> Result<f64> {
    if x.len() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: x.len(),
        });
    }
    if mu.dist_to_support(x).is_none() {
        return Err(Error::EmptyMeasure(
            "bilateral beta needs a measure with support",
        ));
    }
    let ball = Ball::new(x.to_vec(), r)?;
    let h_full = cfg.quad_spacing_frac * r;
    check_spacing(h_full, r)?;
    let h_cheap = h_full.max(r / 8.0);
    let sharp = weighted_restrict(mu, &ball, RestrictMode::Sharp);
    let (pos, w) = atoms_flat(&sharp);
    let mut full = |l: &AffinePlane| {
        bilateral_beta2_given_plane(mu, x, r, n, l, h_full).unwrap_or(f64::INFINITY)
    };
    let mut cheap = |l: &AffinePlane| {
        bilateral_beta2_given_plane(mu, x, r, n, l, h_cheap).unwrap_or(f64::INFINITY)
    };
    Ok(search_plane(&ball, n, &pos, &w, cfg, &mut full, &mut cheap)?.value)
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`,
/// reporting the smallest value seen.
fn golden_min(
    mut f: impl FnMut(f64) -> Result<f64>,
    lo: f64,
    hi: f64,
    iters: usize,
) -> Result<f64> {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut a = lo;
    let mut b = hi;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut best = fc.min(fd);
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d)?;
        }
        best = best.min(fc.min(fd));
    }
    Ok(best)
}

/// Inner minimization shared by the tolsa-alpha entry points: the flat
/// multiple `c ≥ 0` is convex in the dual-Lipschitz distance, so bracket
/// outward from the mass-matching guess and golden-section down.
fn tolsa_core(
    mu: &DiscreteMeasure,
    ball: &Ball,
    l: &AffinePlane,
    h: f64,
    golden_iters: usize,
) -> Result<f64> {
    let sharp = mu.ball_mass(ball);
    if !(sharp > 0.0) {
        return Err(Error::UndefinedCoefficient(format!(
            "mu(B) = {sharp}: tolsa alpha needs positive sharp mass"
        )));
    }
    let gap = l.distance(ball.center());
    if gap > ball.radius() {
        return Err(Error::NoIntersection(format!(
            "plane at distance {gap:.6e} does not meet the closed ball (radius {:.6e})",
            ball.radius()
        )));
    }
    let quad = if gap < ball.radius() {
        plane_quadrature(l, ball, h)?
    } else {
        DiscreteMeasure::new(mu.dim())
    };
    let quad_mass = quad.total_mass();
    let normalize = |f_value: f64| f_value / (ball.radius() * sharp);
    if !(quad_mass > 0.0) {
        return Ok(normalize(fb_distance(mu, &quad, ball)?));
    }
    let mut f = |c: f64| fb_distance(mu, &quad.scaled(c), ball);
    let c0 = sharp / quad_mass;
    let mut hi = 2.0 * c0;
    let mut f_inner = f(c0)?;
    let mut f_hi = f(hi)?;
    let mut expansions = 0;
    while f_hi < f_inner && expansions < 24 {
        f_inner = f_hi;
        hi *= 2.0;
        f_hi = f(hi)?;
        expansions += 1;
    }
    let best = golden_min(&mut f, 0.0, hi, golden_iters)?;
    Ok(normalize(best.min(f_inner).min(f_hi)))
}

/// Tolsa-style flatness at a fixed plane: `inf_c F_B(μ, c·H^n|_L) / (r·μ(B))`
/// where `F_B` is the distance against test functions that are 1-Lipschitz
/// and bounded by the distance to the complement of `B`.
pub fn tolsa_alpha_given_plane(
    mu: &DiscreteMeasure,
    ball: &Ball,
    l: &AffinePlane,
    h: f64,
) -> Result<f64> {
    check_plane_ambient(l, mu.dim())?;
    if ball.dim() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: ball.dim(),
        });
    }
    tolsa_core(mu, ball, l, h, 48)
}

/// Tolsa-style flatness minimized over both the plane and the flat multiple.
pub fn tolsa_alpha(
    mu: &DiscreteMeasure,
    ball: &Ball,
    n: usize,
    cfg: &SearchConfig,
) -> Result<f64> {
    if ball.dim() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: ball.dim(),
        });
    }
    let sharp_mass = mu.ball_mass(ball);
    if !(sharp_mass > 0.0) {
        return Err(Error::UndefinedCoefficient(format!(
            "mu(B) = {sharp_mass}: tolsa alpha needs positive sharp mass"
        )));
    }
    let r = ball.radius();
    let h_full = cfg.quad_spacing_frac * r;
    check_spacing(h_full, r)?;
    let h_cheap = h_full.max(r / 8.0);
    let inside = weighted_restrict(mu, ball, RestrictMode::Sharp);
    let (pos, w) = atoms_flat(&inside);
    let mut full =
        |l: &AffinePlane| tolsa_core(mu, ball, l, h_full, 40).unwrap_or(f64::INFINITY);
    let mut cheap =
        |l: &AffinePlane| tolsa_core(mu, ball, l, h_cheap, 14).unwrap_or(f64::INFINITY);
    Ok(search_plane(ball, n, &pos, &w, cfg, &mut full, &mut cheap)?.value)
}

/// Which coefficient a profile tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientKind {
    Alpha(u32),
    AlphaHat,
    Beta(u32),
    BilateralBeta2,
    TolsaAlpha,
    Delta,
}

impl CoefficientKind {
    pub fn label(self) -> String {
        match self {
            CoefficientKind::Alpha(p) => format!("alpha{p}"),
            CoefficientKind::AlphaHat => "alpha_hat".into(),
            CoefficientKind::Beta(p) => format!("beta{p}"),
            CoefficientKind::BilateralBeta2 => "bilateral_beta2".into(),
            CoefficientKind::TolsaAlpha => "tolsa_alpha".into(),
            CoefficientKind::Delta => "delta".into(),
        }
    }
}

impl FromStr for CoefficientKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha1" => Ok(CoefficientKind::Alpha(1)),
            "alpha2" => Ok(CoefficientKind::Alpha(2)),
            "alpha_hat" => Ok(CoefficientKind::AlphaHat),
            "beta1" => Ok(CoefficientKind::Beta(1)),
            "beta2" => Ok(CoefficientKind::Beta(2)),
            "bilateral_beta2" => Ok(CoefficientKind::BilateralBeta2),
            "tolsa_alpha" => Ok(CoefficientKind::TolsaAlpha),
            "delta" => Ok(CoefficientKind::Delta),
            other => Err(Error::InvalidParameter {
                name: "kind",
                reason: format!(
                    "unknown coefficient kind {other:?}; expected one of alpha1, alpha2, \
                     alpha_hat, beta1, beta2, bilateral_beta2, tolsa_alpha, delta"
                ),
            }),
        }
    }
}

/// Settings for a full profile run.
#[derive(Debug, Clone)]
pub struct ProfileConfig {
    /// Dimension `n` of the comparison planes (and of the density power).
    pub plane_dim: usize,
    pub search: SearchConfig,
    /// Fixed plane for `alpha_hat` profiles; ignored by every other kind.
    pub reference_plane: Option<AffinePlane>,
}

impl ProfileConfig {
    pub fn for_plane_dim(plane_dim: usize) -> Self {
        ProfileConfig {
            plane_dim,
            search: SearchConfig::default(),
            reference_plane: None,
        }
    }
}

/// One scale of a profile.  `value` is `None` where the coefficient is
/// undefined (alpha kinds on an empty ball) or where evaluation failed; such
/// rows contribute nothing to the partial sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub scale: f64,
    pub value: Option<f64>,
    pub square_sum_partial: f64,
}

/// Per-center, per-scale table of coefficient values with running
/// square-function partial sums `Σ value²·ln 2`.
#[derive(Debug, Clone)]
pub struct CoefficientProfile {
    pub center: Vec<f64>,
    pub kind: CoefficientKind,
    pub rows: Vec<ProfileRow>,
}

impl CoefficientProfile {
    /// Final partial sum (zero for an all-undefined profile).
    pub fn square_sum(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.square_sum_partial)
    }

    /// CSV with a header row; undefined values serialize as an empty field.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("scale,value,square_sum_partial\n");
        for row in &self.rows {
            match row.value {
                Some(v) => {
                    out.push_str(&format!("{},{},{}\n", row.scale, v, row.square_sum_partial))
                }
                None => out.push_str(&format!("{},,{}\n", row.scale, row.square_sum_partial)),
            }
        }
        out
    }

    pub fn to_json_value(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                json!({
                    "scale": row.scale,
                    "value": row.value,
                    "square_sum_partial": row.square_sum_partial,
                })
            })
            .collect();
        json!({
            "center": self.center,
            "kind": self.kind.label(),
            "rows": rows,
        })
    }

    /// Whitespace-separated columns for plotting; undefined rows are dropped.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("# scale value square_sum_partial\n");
        for row in &self.rows {
            if let Some(v) = row.value {
                out.push_str(&format!("{} {} {}\n", row.scale, v, row.square_sum_partial));
            }
        }
        out
    }
}

/// Evaluate one coefficient kind down the dyadic ladder `r_k = r₀·2^{−k}`,
/// `k = 0..depth`, accumulating `Σ value²·ln 2`.  Per-scale failures become
/// undefined rows; they never abort the profile.
pub fn square_function(
    mu: &DiscreteMeasure,
    center: &[f64],
    r0: f64,
    depth: usize,
    kind: CoefficientKind,
    cfg: &ProfileConfig,
) -> Result<CoefficientProfile> {
    if center.len() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: center.len(),
        });
    }
    if !(r0 > 0.0 && r0.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "r0",
            reason: format!("{r0} is not a positive finite top scale"),
        });
    }
    if depth == 0 {
        return Err(Error::InvalidParameter {
            name: "depth",
            reason: "a profile needs at least one scale".into(),
        });
    }
    match kind {
        CoefficientKind::Alpha(p) | CoefficientKind::Beta(p) => check_p(p)?,
        CoefficientKind::AlphaHat => {
            let l = cfg.reference_plane.as_ref().ok_or(Error::InvalidParameter {
                name: "reference_plane",
                reason: "alpha_hat profiles need a fixed reference plane".into(),
            })?;
            check_plane_ambient(l, mu.dim())?;
        }
        _ => {}
    }

    let mut rows = Vec::with_capacity(depth);
    let mut partial = 0.0_f64;
    for k in 0..depth {
        let r = r0 * 0.5_f64.powi(k as i32);
        let ball = Ball::new(center.to_vec(), r)?;
        let defined_mass = mu.ball_mass(&ball) > 0.0;
        let outcome: Result<Option<f64>> = match kind {
            CoefficientKind::Alpha(p) => {
                if defined_mass {
                    best_plane(mu, &ball, cfg.plane_dim, p, &cfg.search).map(|fit| Some(fit.value))
                } else {
                    Ok(None)
                }
            }
            CoefficientKind::AlphaHat => {
                if defined_mass {
                    let l = cfg.reference_plane.as_ref().expect("checked above");
                    alpha_hat(mu, &ball, l, cfg.search.quad_spacing_frac * r).map(Some)
                } else {
                    Ok(None)
                }
            }
            CoefficientKind::Beta(p) => {
                beta_p(mu, center, r, p, cfg.plane_dim, &cfg.search).map(Some)
            }
            CoefficientKind::BilateralBeta2 => {
                bilateral_beta2(mu, center, r, cfg.plane_dim, &cfg.search).map(Some)
            }
            CoefficientKind::TolsaAlpha => {
                if defined_mass {
                    tolsa_alpha(mu, &ball, cfg.plane_dim, &cfg.search).map(Some)
                } else {
                    Ok(None)
                }
            }
            CoefficientKind::Delta => delta_coefficient(mu, center, r, cfg.plane_dim).map(Some),
        };
        let value = outcome.unwrap_or(None);
        if let Some(v) = value {
            partial += v * v * LN_2;
        }
        rows.push(ProfileRow {
            scale: r,
            value,
            square_sum_partial: partial,
        });
    }
    Ok(CoefficientProfile {
        center: center.to_vec(),
        kind,
        rows,
    })
}
