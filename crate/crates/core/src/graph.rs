//! Lipschitz graphs, their surface measure, and graph-adapted dyadic cubes.
//!
//! A graph `Γ = {(u, A(u)) : u ∈ R^n} ⊂ R^d` is described by its height map
//! `A : R^n → R^{d−n}` with a Lipschitz bound at most 1.  The module provides
//! the two projections (Π₀ onto the base plane, Π_Γ onto the graph along the
//! vertical fibers), a quadrature of the surface measure `σ = (Π_Γ)_* H^n`,
//! dyadic lattices of Γ-cubes built over half-open base cubes (optionally
//! translated by `e/3`, `e ∈ {0,1}^n`), and the shifted-grid container lookup
//! that places a tripled enlarged ball of a cube inside a single vertical
//! cylinder of a coarser translated cube.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::measure::{Ball, DiscreteMeasure};
use crate::vecmath::dist;

/// Default enlargement factor for the big balls `B̃_Q = Λ·B_Q`.
pub const LAMBDA: f64 = 9.0 * SQRT_2;

/// Number of random pairs used to validate a claimed Lipschitz bound.
const LIPSCHITZ_SAMPLES: usize = 10_000;

/// Half-width of the box the Lipschitz validation samples from.  Lattice
/// roots are unit-sized near the origin, and every construction here stays
/// within a few sidelengths of its root, so this comfortably covers the
/// region the library actually evaluates height maps on.
const VALIDATION_HALF_WIDTH: f64 = 4.0;

type HeightMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A Lipschitz graph over the base plane `L₀ = R^n × {0}`.
///
/// Construction samples the height map on random pairs and rejects it if the
/// claimed bound is violated; the check is probabilistic but deterministic
/// (fixed seed), so a graph that constructs once constructs always.
#[derive(Clone)]
pub struct LipschitzGraph {
    n: usize,
    d: usize,
    bound: f64,
    map: HeightMap,
}

impl fmt::Debug for LipschitzGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LipschitzGraph")
            .field("n", &self.n)
            .field("d", &self.d)
            .field("bound", &self.bound)
            .finish_non_exhaustive()
    }
}

impl LipschitzGraph {
    /// Wrap a height map `A : R^n → R^{d−n}` with its Lipschitz bound.
    pub fn new(
        n: usize,
        d: usize,
        lipschitz_bound: f64,
        map: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if n == 0 || n >= d {
            return Err(Error::InvalidParameter {
                name: "n",
                reason: format!("graph dimension {n} must satisfy 1 <= n < d = {d}"),
            });
        }
        if !(lipschitz_bound.is_finite() && (0.0..=1.0).contains(&lipschitz_bound)) {
            return Err(Error::InvalidParameter {
                name: "lipschitz_bound",
                reason: format!("{lipschitz_bound} is outside [0, 1]"),
            });
        }
        let probe = map(&vec![0.0; n]);
        if probe.len() != d - n {
            return Err(Error::DimensionMismatch {
                expected: d - n,
                got: probe.len(),
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(0x11b5);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n)
                .map(|_| rng.gen_range(-VALIDATION_HALF_WIDTH..VALIDATION_HALF_WIDTH))
                .collect()
        };
        for _ in 0..LIPSCHITZ_SAMPLES {
            let u = draw(&mut rng);
            let v = draw(&mut rng);
            let separation = dist(&u, &v);
            let observed = dist(&map(&u), &map(&v));
            if observed > lipschitz_bound * separation + 1e-12 {
                return Err(Error::LipschitzViolation {
                    bound: lipschitz_bound,
                    observed,
                    separation,
                });
            }
        }
        Ok(LipschitzGraph {
            n,
            d,
            bound: lipschitz_bound,
            map: Arc::new(map),
        })
    }

    /// The flat graph `A ≡ 0`, i.e. the base plane itself.
    pub fn flat(n: usize, d: usize) -> Result<Self> {
        let gap = d - n;
        Self::new(n, d, 0.0, move |_u| vec![0.0; gap])
    }

    pub fn dim_base(&self) -> usize {
        self.n
    }

    pub fn dim_ambient(&self) -> usize {
        self.d
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.bound
    }

    /// Evaluate the height map at a base point.
    pub fn height(&self, u: &[f64]) -> Vec<f64> {
        debug_assert_eq!(u.len(), self.n);
        (self.map)(u)
    }

    /// `Π_Γ`: project an ambient point onto the graph along its vertical
    /// fiber, `(x₁..x_n, *) ↦ (x₁..x_n, A(x₁..x_n))`.  Idempotent.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.d);
        let mut out = Vec::with_capacity(self.d);
        out.extend_from_slice(&x[..self.n]);
        out.extend((self.map)(&x[..self.n]));
        out
    }

    /// The point of Γ above a base point.
    pub fn lift(&self, u: &[f64]) -> Vec<f64> {
        debug_assert_eq!(u.len(), self.n);
        let mut out = Vec::with_capacity(self.d);
        out.extend_from_slice(u);
        out.extend((self.map)(u));
        out
    }
}

/// Quadrature of the surface measure `σ = (Π_Γ)_* H^n|_{L₀}` over the base
/// box `Π [lo_i, hi_i)`.  The box is tiled exactly by cells of width at most
/// `h` per axis (the last cells are not clipped — the per-axis width is
/// shrunk so a whole number fit), so the total mass is the box volume up to
/// summation rounding, and exactly for dyadic boxes and spacings.
pub fn sigma_quadrature(
    graph: &LipschitzGraph,
    lo: &[f64],
    hi: &[f64],
    h: f64,
) -> Result<DiscreteMeasure> {
    let n = graph.dim_base();
    if lo.len() != n || hi.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: lo.len().max(hi.len()),
        });
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParameter {
            name: "spacing",
            reason: format!("{h} is not a positive spacing"),
        });
    }
    let mut counts = Vec::with_capacity(n);
    let mut widths = Vec::with_capacity(n);
    let mut cell = 1.0_f64;
    let mut total = 1usize;
    for i in 0..n {
        let side = hi[i] - lo[i];
        if !(side > 0.0) {
            return Err(Error::InvalidParameter {
                name: "region",
                reason: format!("side {i} is empty: [{}, {})", lo[i], hi[i]),
            });
        }
        let m = (side / h).ceil().max(1.0);
        if m > 2e7 {
            return Err(Error::InvalidParameter {
                name: "spacing",
                reason: format!("axis {i} would need {m:.0} cells; refusing beyond 2e7"),
            });
        }
        let m = m as usize;
        let w = side / m as f64;
        counts.push(m);
        widths.push(w);
        cell *= w;
        total = total.saturating_mul(m);
    }
    if total > 20_000_000 {
        return Err(Error::InvalidParameter {
            name: "spacing",
            reason: format!("grid would hold {total} nodes; refusing beyond 2e7"),
        });
    }

    let mut out = DiscreteMeasure::new(graph.dim_ambient());
    let mut index = vec![0usize; n];
    let mut u = vec![0.0; n];
    for flat in 0..total {
        let mut rem = flat;
        for (slot, &m) in index.iter_mut().zip(&counts) {
            *slot = rem % m;
            rem /= m;
        }
        for i in 0..n {
            u[i] = lo[i] + (index[i] as f64 + 0.5) * widths[i];
        }
        out.push_unchecked(&graph.lift(&u), cell);
    }
    Ok(out)
}

/// A graph-adapted dyadic cube: the Γ-image of a half-open base cube from a
/// (possibly `e/3`-translated) dyadic grid, with its graph center and
/// sampled diameter cached at construction.
#[derive(Debug, Clone)]
pub struct GammaCube {
    corner: Vec<f64>,
    side: f64,
    shift: Vec<u8>,
    z: Vec<f64>,
    diam: f64,
}

/// Per-axis sample count giving about 256 base points for the diameter scan.
fn diam_samples_per_axis(n: usize) -> usize {
    match n {
        1 => 256,
        2 => 16,
        3 => 7,
        _ => {
            let mut k = 2usize;
            while k.pow(n as u32) < 256 {
                k += 1;
            }
            k
        }
    }
}

impl GammaCube {
    /// Build the cube over `Π [corner_i, corner_i + side)` and cache its
    /// graph center and diameter.
    ///
    /// The diameter is the exact pairwise supremum over a 256-point sample
    /// of the closed base cube's Γ-image, inflated by 1.01.  Sampling can
    /// only undershoot a supremum; for Lipschitz height maps the undershoot
    /// is a vanishing fraction of the true diameter, which the 1% margin
    /// absorbs.  A chord formula is never used: it has no validity beyond
    /// flat graphs.
    pub fn new(
        graph: &LipschitzGraph,
        corner: Vec<f64>,
        side: f64,
        shift: Vec<u8>,
    ) -> Result<Self> {
        let n = graph.dim_base();
        if corner.len() != n || shift.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: corner.len().max(shift.len()),
            });
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::InvalidParameter {
                name: "side",
                reason: format!("{side} is not a positive sidelength"),
            });
        }
        if shift.iter().any(|&b| b > 1) {
            return Err(Error::InvalidParameter {
                name: "shift",
                reason: "shift entries must be 0 or 1".into(),
            });
        }
        let center: Vec<f64> = corner.iter().map(|&c| c + side / 2.0).collect();
        let z = graph.lift(&center);

        let k = diam_samples_per_axis(n);
        let count = k.pow(n as u32);
        let mut points: Vec<Vec<f64>> = Vec::with_capacity(count);
        let mut index = vec![0usize; n];
        let mut u = vec![0.0; n];
        for flat in 0..count {
            let mut rem = flat;
            for slot in index.iter_mut() {
                *slot = rem % k;
                rem /= k;
            }
            for i in 0..n {
                u[i] = corner[i] + side * index[i] as f64 / (k - 1) as f64;
            }
            points.push(graph.lift(&u));
        }
        let mut sup = 0.0_f64;
        for a in 0..points.len() {
            for b in (a + 1)..points.len() {
                sup = sup.max(dist(&points[a], &points[b]));
            }
        }
        Ok(GammaCube {
            corner,
            side,
            shift,
            z,
            diam: sup * 1.01,
        })
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn corner(&self) -> &[f64] {
        &self.corner
    }

    pub fn shift(&self) -> &[u8] {
        &self.shift
    }

    /// Graph center `z_Q = Π_Γ(center of the base cube)`.
    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// Cached sampled diameter of the Γ-image (with its 1% margin).
    pub fn diam(&self) -> f64 {
        self.diam
    }

    /// `B_Q = B(z_Q, 3·diam)`.
    pub fn ball(&self) -> Ball {
        Ball::new(self.z.clone(), 3.0 * self.diam).expect("diam is positive")
    }

    /// `B̃_Q = λ·B_Q`.
    pub fn big_ball(&self, lambda: f64) -> Ball {
        self.ball().scaled(lambda)
    }

    /// Half-open membership of a base point.
    pub fn base_contains(&self, u: &[f64]) -> bool {
        u.len() == self.corner.len()
            && self
                .corner
                .iter()
                .zip(u)
                .all(|(&c, &x)| c <= x && x < c + self.side)
    }

    /// Membership in the vertical cylinder `V(Q) = {x : Π_Γ(x) ∈ Q}`,
    /// decided exactly through the base cube (Π_Γ preserves base
    /// coordinates, so no height evaluation is needed).
    pub fn vertical_contains(&self, x: &[f64]) -> bool {
        x.len() >= self.corner.len() && self.base_contains(&x[..self.corner.len()])
    }

    pub fn to_json_value(&self, lambda: f64) -> Value {
        json!({
            "corner": self.corner,
            "side": self.side,
            "shift": self.shift,
            "z": self.z,
            "diam": self.diam,
            "r_ball": 3.0 * self.diam,
            "r_big_ball": lambda * 3.0 * self.diam,
        })
    }
}

/// Build the dyadic lattice of Γ-cubes over a root base cube: level `j`
/// holds the `2^{n·j}` half-open children of sidelength `root_side·2^{−j}`,
/// each exactly tiling the root (dyadic halving is float-exact).  A nonzero
/// `shift` translates the whole grid — root included — by `shift/3`.
pub fn build_lattice(
    graph: &LipschitzGraph,
    root_corner: &[f64],
    root_side: f64,
    depth: usize,
    shift: &[u8],
) -> Result<Vec<Vec<GammaCube>>> {
    let n = graph.dim_base();
    if root_corner.len() != n || shift.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: root_corner.len().max(shift.len()),
        });
    }
    let cubes_finest = (1u64 << n).checked_pow(depth as u32);
    match cubes_finest {
        Some(c) if c <= 1 << 22 => {}
        _ => {
            return Err(Error::InvalidParameter {
                name: "depth",
                reason: format!("depth {depth} in dimension {n} exceeds 2^22 cubes"),
            });
        }
    }
    let origin: Vec<f64> = root_corner
        .iter()
        .zip(shift)
        .map(|(&c, &e)| c + e as f64 / 3.0)
        .collect();

    let mut levels: Vec<Vec<GammaCube>> = Vec::with_capacity(depth + 1);
    for j in 0..=depth {
        let side = root_side * 0.5_f64.powi(j as i32);
        let per_axis = 1usize << j;
        let count = per_axis.pow(n as u32);
        let mut level = Vec::with_capacity(count);
        let mut index = vec![0usize; n];
        for flat in 0..count {
            let mut rem = flat;
            for slot in index.iter_mut() {
                *slot = rem % per_axis;
                rem /= per_axis;
            }
            let corner: Vec<f64> = origin
                .iter()
                .zip(&index)
                .map(|(&o, &i)| o + i as f64 * side)
                .collect();
            level.push(GammaCube::new(graph, corner, side, shift.to_vec())?);
        }
        levels.push(level);
    }
    Ok(levels)
}

/// JSON dump of a lattice: one array per level, cubes in construction order.
pub fn lattice_to_json(levels: &[Vec<GammaCube>], lambda: f64) -> Value {
    let out: Vec<Value> = levels
        .iter()
        .map(|level| {
            Value::Array(level.iter().map(|q| q.to_json_value(lambda)).collect())
        })
        .collect();
    json!({ "lambda": lambda, "levels": out })
}

/// Container of a cube in the translated grids: the coarser cube, the grid
/// shift it came from, and the dyadic level of its sidelength.
#[derive(Debug, Clone)]
pub struct ShiftedContainer {
    pub cube: GammaCube,
    /// Grid shift `e` with `P ∈ D^e`.
    pub e: Vec<u8>,
    /// `−log₂ ℓ(P)` rounded to the nearest integer (exact for dyadic roots).
    pub k: i32,
    /// Scale gap: `ℓ(P) = 2^{k0}·ℓ(Q)`.
    pub k0: u32,
}

/// Smallest scale gap `k0` such that a translated cube of sidelength
/// `2^{k0}·ℓ(Q)` whose middle-third region contains the base center is
/// guaranteed to contain the base disc of `3·B̃_Q`.
///
/// A point in the middle two-thirds of a cube of side `L` keeps distance at
/// least `L/6` from the boundary, so the requirement is
/// `2^{k0}·ℓ(Q)/6 ≥ 9λ·diam(Q)`.
pub fn required_container_level(q: &GammaCube, lambda: f64) -> u32 {
    let need = 54.0 * lambda * q.diam() / q.side();
    let mut k0 = 0u32;
    while 2.0_f64.powi(k0 as i32) < need {
        k0 += 1;
    }
    k0
}

/// Find the translated-grid cube `P` with `ℓ(P) = 2^{k0}·ℓ(Q)` whose
/// vertical cylinder contains `3·B̃_Q`, taking the lexicographically
/// smallest admissible shift `e ∈ {0,1}^n`.
///
/// Admissibility means the base center of `Q` lies in the middle two-thirds
/// of `P`'s base.  The `e/3` translates are absolute, so relative to cells
/// of sidelength `2^{−j} ≤ 1` they land at one or two thirds of the cell and
/// some translate always works; for coarser container scales (`2^{k0}·ℓ(Q)`
/// beyond 1) the shift degenerates relative to the cell, the covering
/// property genuinely fails, and the lookup reports an error for centers
/// near a cell boundary.  Callers should keep `ℓ(Q) ≤ 2^{−k0}`.
pub fn find_shifted_container(
    graph: &LipschitzGraph,
    q: &GammaCube,
    lambda: f64,
) -> Result<ShiftedContainer> {
    if !(lambda >= 1.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "lambda",
            reason: format!("{lambda} is not a finite enlargement factor >= 1"),
        });
    }
    let n = graph.dim_base();
    let k0 = required_container_level(q, lambda);
    let big = q.side() * 2.0_f64.powi(k0 as i32);
    // Base center of Q — Π₀(z_Q) exactly, since Π_Γ keeps base coordinates.
    let x: Vec<f64> = q.corner().iter().map(|&c| c + q.side() / 2.0).collect();

    for code in 0..(1u32 << n) {
        let e: Vec<u8> = (0..n).map(|i| ((code >> (n - 1 - i)) & 1) as u8).collect();
        let corner: Vec<f64> = x
            .iter()
            .zip(&e)
            .map(|(&xi, &ei)| {
                let off = ei as f64 / 3.0;
                ((xi - off) / big).floor() * big + off
            })
            .collect();
        let admissible = corner
            .iter()
            .zip(&x)
            .all(|(&c, &xi)| (xi - (c + big / 2.0)).abs() <= big / 3.0);
        if admissible {
            let cube = GammaCube::new(graph, corner, big, e.clone())?;
            let k = (-big.log2()).round() as i32;
            return Ok(ShiftedContainer { cube, e, k, k0 });
        }
    }
    Err(Error::NoContainer(format!(
        "no one-third translate at scale {big:.3e} keeps the center of Q away \
         from its boundary (base center {x:?})"
    )))
}
