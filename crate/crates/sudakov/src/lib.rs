//! Sudakov decomposition of discrete optimal transport problems with convex
//! translation-invariant costs.
//!
//! The pipeline, end to end:
//!
//! 1. **Lift** the cost `c(x′ − x)` to a 1-homogeneous cone cost
//!    `c̄(t, x) = t·c(−x/t)` on `[0,∞) × ℝᵈ` ([`cone`]).
//! 2. **Solve** the discrete Kantorovich problem exactly, producing a vertex
//!    plan and dual potentials ([`solver`]).
//! 3. **Partition** the transport geometry into directed locally affine
//!    pieces read off the lifted dual potential ([`potential`]).
//! 4. **Refine** each piece into cyclically connected components via a
//!    ternary marker function and strongly connected components of the
//!    carriage graph ([`refine`]).
//! 5. **Extract** a Monge map inside each component with a secondary
//!    quadratic cost ([`map_extract`]).
//! 6. **Verify** the construction: disintegration concentration, the area
//!    shrinking estimate, and the full invariant suite ([`measure`]).
//!
//! Two arithmetic backends are supported throughout ([`scalar::Scalar`]):
//! exact big rationals, where every face decision is a discrete identity, and
//! `f64` with a fixed comparison tolerance for sampled pipelines.
//!
//! A note on existence: polyhedral costs grow only linearly, so the usual
//! superlinear-growth route to existence of optimal plans does not apply.
//! Everything here operates on finitely many atoms — compact supports — where
//! minimizers exist by finiteness alone, and the lifting argument for
//! 1-homogeneous costs covers the cone stage.

pub mod cone;
pub mod generate;
pub mod io;
pub mod linalg;
pub mod map_extract;
pub mod measure;
pub mod potential;
pub mod refine;
pub mod render;
pub mod scalar;
pub mod solver;

/// Crate-wide error type.
///
/// The two broad classes matter operationally: bad input (malformed files,
/// dimension mismatches, infeasible masks) versus violated internal checks
/// (an invariant the pipeline promised did not hold). The command-line
/// frontend maps the first class to exit code 2 and the second to 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed text input; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    /// Structurally valid but semantically unacceptable input.
    #[error("invalid input: {0}")]
    Input(String),
    /// A promised internal invariant failed to hold.
    #[error("invariant violated: {0}")]
    Invariant(String),
    /// A requested operation is outside the supported envelope.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// The instance admits no feasible transport plan.
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
