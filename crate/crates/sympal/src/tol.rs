//! Centralized numerical tolerances.
//!
//! Thresholds contract with each other: e.g. the orbit-closure tolerance
//! must be looser than the implicit-solve tolerance, and the null-space
//! detector looser than both. Keeping them in one place makes the ordering
//! auditable.

/// Fixed-point / Newton tolerance for the implicit generating-function solve.
pub const IMPLICIT_SOLVE: f64 = 1e-13;

/// Max iterations for the implicit solve before `SolveFailure`.
pub const IMPLICIT_MAX_ITER: usize = 200;

/// Symplecticity check: `‖MᵀJM − J‖∞` must stay below this.
pub const SYMPLECTIC: f64 = 1e-9;

/// Orbit closure after reducing modulo `Z^{2d}`.
pub const ORBIT_CLOSURE: f64 = 1e-10;

/// Gradient ∞-norm below which a loop counts as a critical point.
pub const CRITICAL_GRADIENT: f64 = 1e-10;

/// Endpoint of the canonical path must match the monodromy this tightly.
pub const PATH_ENDPOINT: f64 = 1e-9;

/// Eigenvalue distance from 1 below which a path endpoint is degenerate.
pub const DEGENERATE_ENDPOINT: f64 = 1e-8;

/// Connector samples this close to the eigenvalue-1 hypersurface (measured
/// by `|det(Γ'(s) − I)|`) force a rejection-and-retry.
pub const CONNECTOR_CROSSING: f64 = 1e-10;

/// An average Maslov index of a closed-up concatenation must be an integer
/// to this absolute tolerance before rounding.
pub const MASLOV_INTEGER: f64 = 1e-6;

/// Consecutive unwrapped rotation-angle samples must differ by less than
/// this (in whole-turn units) for unambiguous branch tracking.
pub const UNWRAP_STEP: f64 = 0.25;

/// Refinement of a path stops once the unwrapped total angle moves less
/// than this between successive sample doublings.
pub const UNWRAP_STABLE: f64 = 1e-6;

/// Hard cap on path samples during dyadic refinement.
pub const UNWRAP_CAP: usize = 1 << 14;

/// Scale factor for the default Hessian kernel threshold:
/// `tol_null = NULL_FACTOR · spectral_radius(H)`.
pub const NULL_FACTOR: f64 = 1e-7;

/// Floquet multipliers of a unipotent endpoint must sit within this of 1.
pub const UNIPOTENT: f64 = 1e-6;

/// Tolerance on `|λⁿ − 1|` for the root-of-unity test.
pub const ROOT_OF_UNITY: f64 = 1e-8;

/// Loop distance below which two converged critical loops are merged as
/// one orbit (after shift/deck alignment).
pub const ORBIT_DEDUP: f64 = 1e-6;

/// Invariants of merged orbit representatives must agree this tightly.
pub const DEDUP_INVARIANT: f64 = 1e-9;

/// Deck/periodicity identities of trigonometric polynomials hold to this.
pub const EXACT_PERIODICITY: f64 = 1e-12;

/// Average Maslov index treated as zero in SDM criteria.
pub const AVMAS_ZERO: f64 = 1e-8;
