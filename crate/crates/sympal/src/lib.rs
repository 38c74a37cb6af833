//! Numerical laboratory for Hamiltonian diffeomorphisms of the standard
//! symplectic torus `T^{2d} = R^{2d}/Z^{2d}`.
//!
//! A map `φ = ψ_{k-1} ∘ … ∘ ψ_0` is given by a list of generating functions
//! (exact trigonometric polynomials), one per factor. Contractible periodic
//! points of `φ` are critical points of a discrete action functional on
//! lifted loops; this crate finds them and computes their invariants:
//! action, Morse index and nullity, Floquet multipliers, average Maslov
//! index and Maslov index of the canonical symplectic path, together with
//! detectors for symplectically degenerate maxima/minima and multi-period
//! action-spectrum scans.

pub mod action;
pub mod cli;
pub mod maslov;
pub mod sampling;
pub mod sdm;
pub mod spectrum;
pub mod symmap;
pub mod systems;
pub mod tol;
pub mod trigpoly;

use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code classes:
/// config errors (2), numerical failures (3), invariant/precondition
/// failures (1).
#[derive(Debug, Error)]
pub enum SympalError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("implicit generating-function solve failed to converge after {iterations} iterations (last residual {residual:.3e}); smallness condition likely violated")]
    SolveFailure { iterations: usize, residual: f64 },

    #[error("factor differential is singular: {0}")]
    DifferentialFailure(String),

    #[error("orbit fails to close at period {period}: residual {residual:.3e}")]
    NotPeriodic { period: usize, residual: f64 },

    #[error("could not build a connecting path avoiding eigenvalue 1: {0}")]
    ConnectFailure(String),

    #[error("path sampling too coarse for unambiguous angle unwrapping (cap {cap} samples reached)")]
    RefineNeeded { cap: usize },

    #[error("orbit equivalence classes carry inconsistent invariants: {0}")]
    InvariantMismatch(String),

    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    #[error("point is not a critical point of every factor: {0}")]
    NotCritical(String),

    #[error("parameter inequalities violated: {0}")]
    ConstraintViolation(String),

    #[error("config error: {0}")]
    Config(String),
}

impl SympalError {
    /// CLI exit-code class: 1 invariant/precondition, 2 config, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        use SympalError::*;
        match self {
            Config(_) | DimensionMismatch { .. } => 2,
            SolveFailure { .. } | DifferentialFailure(_) | ConnectFailure(_) | RefineNeeded { .. } => 3,
            NotPeriodic { .. } | InvariantMismatch(_) | PreconditionFailed(_) | NotCritical(_)
            | ConstraintViolation(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, SympalError>;
