use thiserror::Error;

/// Unified error type for the whole crate.
///
/// Geometry and solver routines are total where the math allows it; everything
/// else reports through these variants rather than panicking.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid atom {index}: {reason}")]
    InvalidAtom { index: usize, reason: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),

    #[error("empty measure: {0}")]
    EmptyMeasure(&'static str),

    #[error("total masses differ beyond tolerance: {mu} vs {nu}")]
    MassMismatch { mu: f64, nu: f64 },

    #[error("instance too large for the enumeration oracle: {0}")]
    OracleTooLarge(String),

    #[error("optimality certificate failed: {0}")]
    Certificate(String),

    #[error(
        "entropic solver did not converge after {iterations} iterations \
         (marginal error {marginal_error:.3e}, dual value {dual_value:.6e})"
    )]
    EntropicDiverged {
        iterations: usize,
        marginal_error: f64,
        dual_value: f64,
    },

    #[error("undefined coefficient: {0}")]
    UndefinedCoefficient(String),

    #[error("no intersection: {0}")]
    NoIntersection(String),

    #[error("Lipschitz bound {bound} violated: gap {observed} over separation {separation}")]
    LipschitzViolation {
        bound: f64,
        observed: f64,
        separation: f64,
    },

    #[error("no admissible shifted container: {0}")]
    NoContainer(String),

    #[error("support escapes the prescribed ball: {0}")]
    SupportEscapes(String),

    #[error("empty cube: {0}")]
    EmptyCube(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
