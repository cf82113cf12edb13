//! Multiscale flatness analysis for discrete measures.
//!
//! The crate measures how close a weighted point set in `R^d` is, ball by
//! ball and scale by scale, to lying on an `n`-dimensional affine plane.  It
//! provides:
//!
//! * exact and entropic optimal-transport solvers for finite measures
//!   ([`transport`]);
//! * the flatness coefficients themselves — Wasserstein-type `α_p` numbers,
//!   `L^2` Jones-type `β` numbers (one-sided and bilateral), a dual-Lipschitz
//!   variant, and density/doubling diagnostics ([`coeffs`], [`measure`]);
//! * shifted dyadic-style lattices adapted to a Lipschitz graph, Whitney
//!   decompositions of the complement with certified distance bounds
//!   ([`graph`], [`whitney`]);
//! * graph approximations of a measure at a scale, martingale differences and
//!   stopping-time trees with packing diagnostics ([`approx`], [`tree`]);
//! * a zoo of reproducible example measures for experiments and calibration
//!   ([`zoo`]).
//!
//! Everything is deterministic: randomized constructions take explicit seeds,
//! and repeated runs produce byte-identical output.

pub mod approx;
pub mod coeffs;
pub mod error;
pub mod graph;
pub mod measure;
pub mod transport;
pub mod tree;
mod vecmath;
pub mod whitney;
pub mod zoo;

pub use error::{Error, Result};
