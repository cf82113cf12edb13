//! Discrete measures, balls, affine planes and the radial cutoff — the
//! geometric substrate every coefficient is built on.
//!
//! Conventions that the rest of the crate relies on:
//!
//! * balls are **open**: an atom exactly at distance `r` from the center is
//!   outside `B(z, r)`;
//! * atoms with weight 0 are legal and semantically identical to their
//!   removal;
//! * all geometry is `f64` with a default comparison tolerance of `1e-9`
//!   unless a routine documents otherwise.

use crate::error::{Error, Result};
use crate::vecmath::{add, compensated_sum, dist, dot, norm, sub};
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::Path;

/// A finite weighted point set in `R^d`.
///
/// Positions are stored in one flat row-major buffer (`atom i` occupies
/// `positions[i*dim .. (i+1)*dim]`) so that tight loops over atom pairs do not
/// chase pointers.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    positions: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(dim: usize) -> Self {
        DiscreteMeasure {
            dim,
            positions: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = (Vec<f64>, f64)>) -> Result<Self> {
        let mut m = DiscreteMeasure::new(dim);
        for (pos, w) in rows {
            m.push(&pos, w)?;
        }
        Ok(m)
    }

    /// Append one atom, validating dimension, finiteness and nonnegativity.
    pub fn push(&mut self, position: &[f64], weight: f64) -> Result<()> {
        let index = self.len();
        if position.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: position.len(),
            });
        }
        if !position.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidAtom {
                index,
                reason: "non-finite coordinate".into(),
            });
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidAtom {
                index,
                reason: format!("weight {weight} is not a finite nonnegative real"),
            });
        }
        self.positions.extend_from_slice(position);
        self.weights.push(weight);
        Ok(())
    }

    /// Internal fast path for atoms that are known valid (quadrature nodes,
    /// translated copies of validated atoms, ...).
    pub(crate) fn push_unchecked(&mut self, position: &[f64], weight: f64) {
        debug_assert_eq!(position.len(), self.dim);
        self.positions.extend_from_slice(position);
        self.weights.push(weight);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.positions
            .chunks_exact(self.dim.max(1))
            .zip(self.weights.iter().copied())
    }

    /// Total mass, compensated so audits at 1e-12 relative are meaningful.
    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.weights.iter().copied())
    }

    /// Sharp mass of the open ball.
    pub fn ball_mass(&self, ball: &Ball) -> f64 {
        compensated_sum(
            self.iter()
                .filter(|(p, _)| ball.contains(p))
                .map(|(_, w)| w),
        )
    }

    /// Translate every atom by `v`.
    pub fn translated(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let mut out = self.clone();
        for i in 0..out.len() {
            for (c, vc) in out.positions[i * self.dim..(i + 1) * self.dim]
                .iter_mut()
                .zip(v)
            {
                *c += vc;
            }
        }
        Ok(out)
    }

    /// Multiply every weight by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for w in &mut out.weights {
            *w *= c;
        }
        out
    }

    /// Drop atoms of weight exactly 0 (semantically a no-op).
    pub fn without_zero_weights(&self) -> Self {
        let mut out = DiscreteMeasure::new(self.dim);
        for (p, w) in self.iter() {
            if w != 0.0 {
                out.push_unchecked(p, w);
            }
        }
        out
    }

    /// Append all atoms of `other` (same ambient dimension).
    pub fn append(&mut self, other: &Self) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        self.positions.extend_from_slice(&other.positions);
        self.weights.extend_from_slice(&other.weights);
        Ok(())
    }

    /// Distance from `y` to the support (atoms of positive weight);
    /// `None` for a measure with no positive-weight atom.
    pub fn dist_to_support(&self, y: &[f64]) -> Option<f64> {
        self.iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(p, _)| dist(p, y))
            .min_by(f64::total_cmp)
    }
}

/// An **open** ball `B(z, r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    center: Vec<f64>,
    radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidParameter {
                name: "radius",
                reason: format!("{radius} is not a positive finite real"),
            });
        }
        if !center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "center",
                reason: "non-finite coordinate".into(),
            });
        }
        Ok(Ball { center, radius })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Open-ball membership: strict inequality.
    pub fn contains(&self, y: &[f64]) -> bool {
        dist(&self.center, y) < self.radius
    }

    /// `λB`: same center, radius scaled by `λ > 0`.
    pub fn scaled(&self, lambda: f64) -> Ball {
        debug_assert!(lambda > 0.0);
        Ball {
            center: self.center.clone(),
            radius: self.radius * lambda,
        }
    }
}

/// The fixed radial cutoff profile: `1` on `[0,2]`, `(3-t)^2` on `(2,3)`,
/// `0` from `3` on.  Values are exact at the breakpoints.
pub fn cutoff_profile(t: f64) -> f64 {
    if t <= 2.0 {
        1.0
    } else if t < 3.0 {
        let s = 3.0 - t;
        s * s
    } else {
        0.0
    }
}

/// `φ_B(y)`: the profile rescaled to `B`, i.e. `cutoff_profile(|y - z(B)| / r(B))`.
///
/// Identically 1 on `2B`, supported in `3B`, with quadratic decay at the outer
/// boundary.
pub fn cutoff_value(ball: &Ball, y: &[f64]) -> f64 {
    let t = dist(ball.center(), y) / ball.radius();
    cutoff_profile(t)
}

/// Restriction mode for [`weighted_restrict`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestrictMode {
    /// Keep atoms strictly inside the ball, weights unchanged.
    Sharp,
    /// Multiply weights by `φ_B` and drop the resulting zeros.
    Cutoff,
}

/// Restrict `μ` to a ball, either sharply or through the cutoff `φ_B`.
pub fn weighted_restrict(mu: &DiscreteMeasure, ball: &Ball, mode: RestrictMode) -> DiscreteMeasure {
    let mut out = DiscreteMeasure::new(mu.dim());
    match mode {
        RestrictMode::Sharp => {
            for (p, w) in mu.iter() {
                if ball.contains(p) {
                    out.push_unchecked(p, w);
                }
            }
        }
        RestrictMode::Cutoff => {
            for (p, w) in mu.iter() {
                let scaled = w * cutoff_value(ball, p);
                if scaled != 0.0 {
                    out.push_unchecked(p, scaled);
                }
            }
        }
    }
    out
}

/// An `n`-dimensional affine subspace of `R^d`, stored as a base point plus an
/// orthonormal frame (row-major, `n` rows of length `d`).
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePlane {
    base: Vec<f64>,
    frame: Vec<f64>,
    n: usize,
    d: usize,
}

impl AffinePlane {
    /// Build a plane through `base` spanned by `directions`.  The directions
    /// are orthonormalized (modified Gram–Schmidt, two passes); near-dependent
    /// input is rejected.
    pub fn new(base: Vec<f64>, directions: &[Vec<f64>]) -> Result<Self> {
        let d = base.len();
        let n = directions.len();
        if n == 0 || n > d {
            return Err(Error::InvalidParameter {
                name: "directions",
                reason: format!("need 1 ≤ n ≤ d, got n={n}, d={d}"),
            });
        }
        if !base.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "base",
                reason: "non-finite coordinate".into(),
            });
        }
        let mut frame: Vec<f64> = Vec::with_capacity(n * d);
        for dir in directions {
            if dir.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: dir.len(),
                });
            }
            let scale = norm(dir);
            if !(scale.is_finite() && scale > 0.0) {
                return Err(Error::DegenerateFrame(
                    "zero or non-finite direction vector".into(),
                ));
            }
            let mut v = dir.clone();
            // Two Gram-Schmidt passes keep orthogonality at the 1e-12 level
            // even for poorly conditioned inputs.
            for _ in 0..2 {
                for row in frame.chunks_exact(d) {
                    let c = dot(&v, row);
                    for (vi, ri) in v.iter_mut().zip(row) {
                        *vi -= c * ri;
                    }
                }
            }
            let res = norm(&v);
            if res <= 1e-10 * scale {
                return Err(Error::DegenerateFrame(format!(
                    "direction is linearly dependent on the previous ones (residual {res:.3e})"
                )));
            }
            for vi in &mut v {
                *vi /= res;
            }
            frame.extend_from_slice(&v);
        }
        Ok(AffinePlane { base, frame, n, d })
    }

    /// The coordinate plane spanned by the first `n` axes, through the origin.
    pub fn coordinate(d: usize, n: usize) -> Self {
        let mut dirs = Vec::with_capacity(n);
        for k in 0..n {
            let mut e = vec![0.0; d];
            e[k] = 1.0;
            dirs.push(e);
        }
        AffinePlane::new(vec![0.0; d], &dirs).expect("coordinate frame is orthonormal")
    }

    pub fn dim_ambient(&self) -> usize {
        self.d
    }

    pub fn dim_plane(&self) -> usize {
        self.n
    }

    pub fn base_point(&self) -> &[f64] {
        &self.base
    }

    pub fn frame_row(&self, k: usize) -> &[f64] {
        &self.frame[k * self.d..(k + 1) * self.d]
    }

    pub fn frame_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.frame.chunks_exact(self.d)
    }

    /// Orthogonal projection onto the plane; idempotent to 1e-10.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let rel = sub(x, &self.base);
        let mut out = self.base.clone();
        for row in self.frame_rows() {
            let c = dot(&rel, row);
            for (oi, ri) in out.iter_mut().zip(row) {
                *oi += c * ri;
            }
        }
        out
    }

    /// Euclidean distance from `x` to the plane.
    pub fn distance(&self, x: &[f64]) -> f64 {
        dist(x, &self.project(x))
    }

    /// In-plane coordinates of (the projection of) `x` relative to the base
    /// point.
    pub fn tangential_coords(&self, x: &[f64]) -> Vec<f64> {
        let rel = sub(x, &self.base);
        self.frame_rows().map(|row| dot(&rel, row)).collect()
    }

    /// The plane point with the given in-plane coordinates.
    pub fn point_at(&self, coords: &[f64]) -> Vec<f64> {
        debug_assert_eq!(coords.len(), self.n);
        let mut out = self.base.clone();
        for (c, row) in coords.iter().zip(self.frame_rows()) {
            for (oi, ri) in out.iter_mut().zip(row) {
                *oi += c * ri;
            }
        }
        out
    }

    /// Same frame, base shifted by `v`.
    pub fn translated(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: v.len(),
            });
        }
        Ok(AffinePlane {
            base: add(&self.base, v),
            frame: self.frame.clone(),
            n: self.n,
            d: self.d,
        })
    }

    /// An orthonormal basis of the orthogonal complement of the direction
    /// space (`d - n` vectors).
    pub fn orthonormal_complement(&self) -> Vec<Vec<f64>> {
        let mut basis: Vec<Vec<f64>> = self.frame_rows().map(|r| r.to_vec()).collect();
        let mut out = Vec::with_capacity(self.d - self.n);
        for k in 0..self.d {
            if out.len() == self.d - self.n {
                break;
            }
            let mut v = vec![0.0; self.d];
            v[k] = 1.0;
            for _ in 0..2 {
                for row in &basis {
                    let c = dot(&v, row);
                    for (vi, ri) in v.iter_mut().zip(row) {
                        *vi -= c * ri;
                    }
                }
            }
            let res = norm(&v);
            if res > 1e-8 {
                for vi in &mut v {
                    *vi /= res;
                }
                basis.push(v.clone());
                out.push(v);
            }
        }
        debug_assert_eq!(out.len(), self.d - self.n);
        out
    }
}

/// Sine of the largest principal angle between the direction spaces of two
/// planes of equal dimension — equivalently the Hausdorff distance between the
/// unit balls of the planes translated to the origin.
///
/// Symmetric by construction (the pair is canonically ordered before the SVD),
/// zero iff the planes are parallel.
pub fn plane_angle(l1: &AffinePlane, l2: &AffinePlane) -> Result<f64> {
    if l1.dim_plane() != l2.dim_plane() {
        return Err(Error::DimensionMismatch {
            expected: l1.dim_plane(),
            got: l2.dim_plane(),
        });
    }
    if l1.dim_ambient() != l2.dim_ambient() {
        return Err(Error::DimensionMismatch {
            expected: l1.dim_ambient(),
            got: l2.dim_ambient(),
        });
    }
    // Canonical order makes plane_angle(a,b) and plane_angle(b,a) run the
    // identical float computation.
    let (a, b) = if cmp_slices(&l1.frame, &l2.frame) == std::cmp::Ordering::Greater {
        (l2, l1)
    } else {
        (l1, l2)
    };
    let n = a.dim_plane();
    let d = a.dim_ambient();
    let fa = nalgebra::DMatrix::from_row_slice(n, d, &a.frame);
    let fb = nalgebra::DMatrix::from_row_slice(n, d, &b.frame);
    let m = fa * fb.transpose();
    let svd = m.svd(false, false);
    let sigma_min = svd
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .clamp(0.0, 1.0);
    Ok((1.0 - sigma_min * sigma_min).max(0.0).sqrt())
}

fn cmp_slices(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let c = x.total_cmp(y);
        if c != std::cmp::Ordering::Equal {
            return c;
        }
    }
    a.len().cmp(&b.len())
}

/// `Δ_μ(x, r) = | μ(B(x,r))/r^n − μ(B(x,2r))/(2r)^n |` from sharp open-ball
/// masses.
pub fn delta_coefficient(mu: &DiscreteMeasure, x: &[f64], r: f64, n: usize) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "r",
            reason: format!("{r} is not a positive finite real"),
        });
    }
    let b1 = Ball::new(x.to_vec(), r)?;
    let b2 = b1.scaled(2.0);
    let rn = r.powi(n as i32);
    let r2n = (2.0 * r).powi(n as i32);
    Ok((mu.ball_mass(&b1) / rn - mu.ball_mass(&b2) / r2n).abs())
}

/// One row of a density report: the `n`-density ratio at scale `r` and the
/// doubling ratio `μ(B(x,2r))/μ(B(x,r))` (`None` when the inner ball is
/// empty).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRow {
    pub scale: f64,
    pub ratio: f64,
    pub doubling: Option<f64>,
}

/// Density ratios `μ(B(x,r))/r^n` and doubling ratios per requested scale.
pub fn density_estimates(
    mu: &DiscreteMeasure,
    x: &[f64],
    scales: &[f64],
    n: usize,
) -> Result<Vec<DensityRow>> {
    let mut rows = Vec::with_capacity(scales.len());
    for &r in scales {
        let b1 = Ball::new(x.to_vec(), r)?;
        let inner = mu.ball_mass(&b1);
        let outer = mu.ball_mass(&b1.scaled(2.0));
        rows.push(DensityRow {
            scale: r,
            ratio: inner / r.powi(n as i32),
            doubling: if inner > 0.0 { Some(outer / inner) } else { None },
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Serialization: CSV (d coordinates then weight per row) and JSON
// ({"dim": d, "atoms": [[x1..xd, w], ...]}).  Floats are written in shortest
// round-trip decimal form, so write→read is bit-exact.
// ---------------------------------------------------------------------------

impl DiscreteMeasure {
    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        for (p, w) in self.iter() {
            for c in p {
                let _ = write!(s, "{c},");
            }
            let _ = writeln!(s, "{w}");
        }
        s
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut measure: Option<DiscreteMeasure> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 2 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    reason: "need at least one coordinate and a weight".into(),
                });
            }
            let mut vals = Vec::with_capacity(fields.len());
            for f in &fields {
                vals.push(f.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    reason: format!("bad float {f:?}: {e}"),
                })?);
            }
            let w = vals.pop().unwrap();
            let m = measure.get_or_insert_with(|| DiscreteMeasure::new(vals.len()));
            if vals.len() != m.dim() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    reason: format!("row has {} coordinates, expected {}", vals.len(), m.dim()),
                });
            }
            m.push(&vals, w).map_err(|e| Error::Parse {
                line: lineno + 1,
                reason: e.to_string(),
            })?;
        }
        measure.ok_or(Error::EmptyMeasure("CSV input contains no atom rows"))
    }

    pub fn to_json_value(&self) -> Value {
        let atoms: Vec<Value> = self
            .iter()
            .map(|(p, w)| {
                let mut row: Vec<Value> = p.iter().map(|c| json!(c)).collect();
                row.push(json!(w));
                Value::Array(row)
            })
            .collect();
        json!({ "dim": self.dim, "atoms": atoms })
    }

    pub fn to_json_string(&self) -> String {
        self.to_json_value().to_string()
    }

    pub fn from_json_value(v: &Value) -> Result<Self> {
        let dim = v
            .get("dim")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Parse {
                line: 0,
                reason: "missing or non-integer \"dim\"".into(),
            })? as usize;
        let atoms = v
            .get("atoms")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Parse {
                line: 0,
                reason: "missing \"atoms\" array".into(),
            })?;
        let mut m = DiscreteMeasure::new(dim);
        for (i, row) in atoms.iter().enumerate() {
            let row = row.as_array().ok_or_else(|| Error::Parse {
                line: i + 1,
                reason: "atom row is not an array".into(),
            })?;
            if row.len() != dim + 1 {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: format!("atom row has {} entries, expected {}", row.len(), dim + 1),
                });
            }
            let mut vals = Vec::with_capacity(dim + 1);
            for e in row {
                vals.push(e.as_f64().ok_or_else(|| Error::Parse {
                    line: i + 1,
                    reason: "non-numeric entry in atom row".into(),
                })?);
            }
            let w = vals.pop().unwrap();
            m.push(&vals, w).map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(m)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        Self::from_json_value(&v)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unit_ball_2d() -> Ball {
        Ball::new(vec![0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn cutoff_profile_breakpoints_exact() {
        assert_eq!(cutoff_profile(0.0), 1.0);
        assert_eq!(cutoff_profile(2.0), 1.0);
        assert_eq!(cutoff_profile(2.5), 0.25);
        assert_eq!(cutoff_profile(3.0), 0.0);
        assert_eq!(cutoff_profile(17.0), 0.0);
    }

    #[test]
    fn cutoff_value_examples() {
        let b = unit_ball_2d();
        assert_eq!(cutoff_value(&b, &[1.0, 0.0]), 1.0);
        assert_eq!(cutoff_value(&b, &[2.5, 0.0]), 0.25);
        assert_eq!(cutoff_value(&b, &[3.0, 0.0]), 0.0);
        // Rescaling: same profile relative to a shifted, dilated ball.
        let b2 = Ball::new(vec![5.0, -1.0], 2.0).unwrap();
        assert_eq!(cutoff_value(&b2, &[10.0, -1.0]), 0.25);
    }

    #[test]
    fn weighted_restrict_examples() {
        let mu = DiscreteMeasure::from_rows(1, [(vec![0.0], 1.0)]).unwrap();
        let b = Ball::new(vec![0.0], 1.0).unwrap();
        let sharp = weighted_restrict(&mu, &b, RestrictMode::Sharp);
        assert_eq!(sharp.len(), 1);
        assert_eq!(sharp.weight(0), 1.0);

        let mu = DiscreteMeasure::from_rows(2, [(vec![2.5, 0.0], 2.0)]).unwrap();
        let cut = weighted_restrict(&mu, &unit_ball_2d(), RestrictMode::Cutoff);
        assert_eq!(cut.len(), 1);
        assert_eq!(cut.weight(0), 0.5);

        let mu = DiscreteMeasure::from_rows(2, [(vec![5.0, 0.0], 1.0)]).unwrap();
        let cut = weighted_restrict(&mu, &unit_ball_2d(), RestrictMode::Cutoff);
        assert!(cut.is_empty());
    }

    #[test]
    fn sharp_restrict_is_strict_at_radius() {
        // Atom exactly at distance r must fall outside the open ball.
        let mu = DiscreteMeasure::from_rows(1, [(vec![1.0], 1.0), (vec![0.5], 1.0)]).unwrap();
        let b = Ball::new(vec![0.0], 1.0).unwrap();
        let sharp = weighted_restrict(&mu, &b, RestrictMode::Sharp);
        assert_eq!(sharp.len(), 1);
        assert_eq!(sharp.position(0), &[0.5]);
    }

    #[test]
    fn plane_angle_examples() {
        let x_axis = AffinePlane::new(vec![0.0, 0.0], &[vec![1.0, 0.0]]).unwrap();
        let y_axis = AffinePlane::new(vec![0.0, 0.0], &[vec![0.0, 1.0]]).unwrap();
        assert_eq!(plane_angle(&x_axis, &x_axis).unwrap(), 0.0);
        assert!((plane_angle(&x_axis, &y_axis).unwrap() - 1.0).abs() < 1e-12);

        let th = std::f64::consts::FRAC_PI_6;
        let tilted = AffinePlane::new(vec![0.0, 0.0], &[vec![th.cos(), th.sin()]]).unwrap();
        assert!((plane_angle(&x_axis, &tilted).unwrap() - 0.5).abs() < 1e-12);
    }

    /// Brute-force Hausdorff distance between the unit balls of the two
    /// direction spaces: sample many unit vectors of each, measure the
    /// farthest one from the other plane's unit ball.  Since the nearest
    /// point of the direction space to a unit vector already has norm ≤ 1,
    /// the distance to the unit ball is just the distance to the subspace.
    fn hausdorff_angle_oracle(l1: &AffinePlane, l2: &AffinePlane, samples: usize) -> f64 {
        let mut rng = StdRng::seed_from_u64(0x9a7c_11d5);
        let through_origin = |l: &AffinePlane| AffinePlane {
            base: vec![0.0; l.dim_ambient()],
            frame: l.frame.clone(),
            n: l.dim_plane(),
            d: l.dim_ambient(),
        };
        let a = through_origin(l1);
        let b = through_origin(l2);
        let mut worst: f64 = 0.0;
        for (src, dst) in [(&a, &b), (&b, &a)] {
            for _ in 0..samples {
                let mut v = vec![0.0; src.dim_ambient()];
                let coords: Vec<f64> = (0..src.dim_plane())
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                let nrm = crate::vecmath::norm(&coords);
                if nrm < 1e-9 {
                    continue;
                }
                let coords: Vec<f64> = coords.iter().map(|c| c / nrm).collect();
                v.copy_from_slice(&src.point_at(&coords));
                let d = dst.distance(&v);
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    #[test]
    fn plane_angle_matches_sampled_hausdorff() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..20 {
            let d = 3;
            let rand_dir = |rng: &mut StdRng| -> Vec<f64> {
                (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
            };
            let l1 = AffinePlane::new(vec![0.0; d], &[rand_dir(&mut rng)]).unwrap();
            let l2 = AffinePlane::new(vec![0.0; d], &[rand_dir(&mut rng)]).unwrap();
            let closed = plane_angle(&l1, &l2).unwrap();
            let sampled = hausdorff_angle_oracle(&l1, &l2, 500);
            // Lines: the supremum is attained at the (sampled) endpoints, so
            // the oracle is tight for n = 1.
            assert!(
                (closed - sampled).abs() < 2e-2,
                "closed {closed} vs sampled {sampled}"
            );
        }
    }

    #[test]
    fn plane_angle_dimension_mismatch_errors() {
        let l1 = AffinePlane::coordinate(2, 1);
        let l2 = AffinePlane::coordinate(3, 1);
        assert!(plane_angle(&l1, &l2).is_err());
        let l3 = AffinePlane::coordinate(3, 2);
        assert!(plane_angle(&l2, &l3).is_err());
    }

    #[test]
    fn affine_plane_projection_idempotent() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let d = rng.gen_range(2..=4usize);
            let n = rng.gen_range(1..=d - 1);
            let dirs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let base: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let plane = match AffinePlane::new(base, &dirs) {
                Ok(p) => p,
                Err(_) => continue, // rare near-dependent draw
            };
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let p1 = plane.project(&x);
            let p2 = plane.project(&p1);
            assert!(dist(&p1, &p2) < 1e-10);
            // Frame orthonormality at 1e-12.
            for i in 0..n {
                for j in 0..n {
                    let g = dot(plane.frame_row(i), plane.frame_row(j));
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((g - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn orthonormal_complement_is_orthonormal_and_orthogonal() {
        let plane =
            AffinePlane::new(vec![1.0, 2.0, 3.0], &[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]])
                .unwrap();
        let comp = plane.orthonormal_complement();
        assert_eq!(comp.len(), 1);
        for row in plane.frame_rows() {
            assert!(dot(&comp[0], row).abs() < 1e-12);
        }
        assert!((norm(&comp[0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delta_coefficient_examples() {
        // Two atoms at 0 and 1.5.
        let mu = DiscreteMeasure::from_rows(1, [(vec![0.0], 1.0), (vec![1.5], 1.0)]).unwrap();
        let v = delta_coefficient(&mu, &[0.0], 0.5, 1).unwrap();
        assert!((v - 1.0).abs() < 1e-12);

        // Single Dirac at the center.
        let mu = DiscreteMeasure::from_rows(1, [(vec![0.0], 1.0)]).unwrap();
        let v = delta_coefficient(&mu, &[0.0], 1.0, 1).unwrap();
        assert!((v - 0.5).abs() < 1e-12);

        // Exactly filled balls at both scales: atoms at half-integers,
        // B(0,2) holds 4 of them, B(0,4) holds 8 — density 2 at both scales.
        let mut mu = DiscreteMeasure::new(1);
        for k in -10..10 {
            mu.push(&[k as f64 + 0.5], 1.0).unwrap();
        }
        let v = delta_coefficient(&mu, &[0.0], 2.0, 1).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn density_estimates_examples() {
        // Dirac at the query point.
        let mu = DiscreteMeasure::from_rows(1, [(vec![0.0], 1.0)]).unwrap();
        let rows = density_estimates(&mu, &[0.0], &[0.25, 1.0], 1).unwrap();
        assert!((rows[0].ratio - 4.0).abs() < 1e-12);
        assert_eq!(rows[0].doubling, Some(1.0));
        assert!((rows[1].ratio - 1.0).abs() < 1e-12);

        // Empty inner ball: ratio 0, doubling undefined.
        let rows = density_estimates(&mu, &[100.0], &[0.5], 1).unwrap();
        assert_eq!(rows[0].ratio, 0.0);
        assert_eq!(rows[0].doubling, None);

        // Dense uniform line sample: density ≈ 2, doubling ≈ 2.
        let h = 0.01;
        let mut mu = DiscreteMeasure::new(2);
        let mut k = -200;
        while k < 200 {
            mu.push(&[(k as f64 + 0.5) * h, 0.0], h).unwrap();
            k += 1;
        }
        // Independent expected values by direct count.
        let count = |r: f64| -> f64 {
            let mut c = 0.0;
            for i in -200..200 {
                let x: f64 = (i as f64 + 0.5) * h;
                if x.abs() < r {
                    c += h;
                }
            }
            c
        };
        let r = 0.5;
        let rows = density_estimates(&mu, &[0.0, 0.0], &[r], 1).unwrap();
        assert!((rows[0].ratio - count(r) / r).abs() < 1e-12);
        assert!((rows[0].ratio - 2.0).abs() < 2.0 * h / r);
        let doubling = rows[0].doubling.unwrap();
        assert!((doubling - 2.0).abs() < 2.0 * h / r);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mu = DiscreteMeasure::from_rows(
            2,
            [
                (vec![0.1, -0.2], 0.3),
                (vec![1.0 / 3.0, 2.0_f64.sqrt()], 1e-17),
                (vec![-0.0, 4.0], 0.0),
            ],
        )
        .unwrap();
        let text = mu.to_csv_string();
        let back = DiscreteMeasure::from_csv_str(&text).unwrap();
        assert_eq!(mu, back);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mu = DiscreteMeasure::from_rows(
            3,
            [
                (vec![0.1, 0.2, 0.3], 0.4),
                (vec![1.0 / 7.0, -1e-300, 1e300], 2.5),
            ],
        )
        .unwrap();
        let back = DiscreteMeasure::from_json_str(&mu.to_json_string()).unwrap();
        assert_eq!(mu, back);
    }

    #[test]
    fn csv_rejects_malformed_rows() {
        assert!(DiscreteMeasure::from_csv_str("1.0,2.0\nbad,3.0\n").is_err());
        assert!(DiscreteMeasure::from_csv_str("1.0,2.0\n1.0,2.0,3.0\n").is_err());
        assert!(DiscreteMeasure::from_csv_str("").is_err());
    }

    #[test]
    fn push_validates_atoms() {
        let mut m = DiscreteMeasure::new(2);
        assert!(m.push(&[1.0], 1.0).is_err());
        assert!(m.push(&[1.0, f64::NAN], 1.0).is_err());
        assert!(m.push(&[1.0, 2.0], -0.5).is_err());
        assert!(m.push(&[1.0, 2.0], f64::INFINITY).is_err());
        assert!(m.push(&[1.0, 2.0], 0.0).is_ok());
    }

    #[test]
    fn zero_weight_atoms_do_not_change_results() {
        let mut mu = DiscreteMeasure::new(1);
        mu.push(&[0.3], 1.0).unwrap();
        mu.push(&[0.9], 0.0).unwrap();
        mu.push(&[-0.2], 2.0).unwrap();
        let pruned = mu.without_zero_weights();
        let b = Ball::new(vec![0.0], 1.0).unwrap();
        assert_eq!(mu.ball_mass(&b), pruned.ball_mass(&b));
        assert_eq!(mu.total_mass(), pruned.total_mass());
        assert_eq!(
            delta_coefficient(&mu, &[0.0], 0.5, 1).unwrap(),
            delta_coefficient(&pruned, &[0.0], 0.5, 1).unwrap()
        );
        assert_eq!(mu.dist_to_support(&[0.85]), pruned.dist_to_support(&[0.85]));
    }

    proptest! {
        #[test]
        fn cutoff_range_and_regions(
            cx in -5.0..5.0f64, cy in -5.0..5.0f64, r in 0.1..3.0f64,
            px in -20.0..20.0f64, py in -20.0..20.0f64,
        ) {
            let b = Ball::new(vec![cx, cy], r).unwrap();
            let v = cutoff_value(&b, &[px, py]);
            prop_assert!((0.0..=1.0).contains(&v));
            let t = dist(&[cx, cy], &[px, py]) / r;
            if t <= 2.0 { prop_assert_eq!(v, 1.0); }
            if t >= 3.0 { prop_assert_eq!(v, 0.0); }
        }

        #[test]
        fn cutoff_mass_between_2b_and_3b(
            seed in 0u64..1000,
            r in 0.2..2.0f64,
        ) {
            let mut rng = StdRng::seed_from_u64(seed);
            let mut mu = DiscreteMeasure::new(2);
            for _ in 0..50 {
                mu.push(
                    &[rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)],
                    rng.gen_range(0.0..2.0),
                ).unwrap();
            }
            let b = Ball::new(vec![0.0, 0.0], r).unwrap();
            let cut = weighted_restrict(&mu, &b, RestrictMode::Cutoff).total_mass();
            let m2 = mu.ball_mass(&b.scaled(2.0));
            let m3 = mu.ball_mass(&b.scaled(3.0));
            prop_assert!(cut <= m3 + 1e-9 * m3.max(1.0));
            prop_assert!(cut >= m2 - 1e-9 * m2.max(1.0));
        }

        #[test]
        fn plane_angle_pseudometric(seed in 0u64..500) {
            let mut rng = StdRng::seed_from_u64(seed);
            let d = 3usize;
            let mk = |rng: &mut StdRng| {
                let dir: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
                AffinePlane::new(vec![0.0; d], &[dir])
            };
            let (l1, l2, l3) = match (mk(&mut rng), mk(&mut rng), mk(&mut rng)) {
                (Ok(a), Ok(b), Ok(c)) => (a, b, c),
                _ => return Ok(()),
            };
            let d12 = plane_angle(&l1, &l2).unwrap();
            let d21 = plane_angle(&l2, &l1).unwrap();
            prop_assert_eq!(d12, d21); // exact symmetry via canonical ordering
            let d13 = plane_angle(&l1, &l3).unwrap();
            let d23 = plane_angle(&l2, &l3).unwrap();
            prop_assert!(d13 <= d12 + d23 + 1e-9);
        }

        #[test]
        fn delta_homogeneity(seed in 0u64..500, c in 0.01..100.0f64) {
            let mut rng = StdRng::seed_from_u64(seed);
            let mut mu = DiscreteMeasure::new(2);
            for _ in 0..20 {
                mu.push(
                    &[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                    rng.gen_range(0.0..1.0),
                ).unwrap();
            }
            let scaled = mu.scaled(c);
            let a = delta_coefficient(&mu, &[0.1, 0.0], 0.7, 1).unwrap();
            let b = delta_coefficient(&scaled, &[0.1, 0.0], 0.7, 1).unwrap();
            prop_assert!((b - c * a).abs() <= 1e-12 * (1.0 + b.abs() + c * a.abs()));
        }
    }
}
