//! Numerical laboratory for the doubly nonlinear nonlocal diffusion equation
//!
//! ```text
//!     du/dt + (-Delta_p)^s (u^m) = 0        on R^d x (0, inf)
//! ```
//!
//! where `(-Delta_p)^s` is the fractional p-Laplacian (the singular integral
//! of odd-power differences against the kernel `|x-y|^(-d-sp)`) and `u^m`
//! denotes the sign-preserving power `|u|^(m-1) u`.
//!
//! The crate discretizes the equation on a truncated grid, marches it by
//! implicit Euler through a resolvent solver, extracts self-similar
//! (Barenblatt) profiles by nascent-delta rescaling, constructs global
//! piecewise barrier supersolutions, and turns the structural facts of the
//! flow (contraction, order preservation, mass conservation, smoothing rates,
//! tail decay, dissipation of crossings) into executable checks.
//!
//! Module map:
//!
//! * [`exponents`] - parameter algebra: derived scaling exponents, decay
//!   regimes, the tail decay law.
//! * [`grid`] - truncated cell-centered grids (full-line and radial),
//!   grid functions, quadrature functionals.
//! * [`kernel`] - dense epsilon-truncated singular kernel tables, angular
//!   reduction for radial symmetry, exterior closure weights.
//! * [`nonlocal`] - the operator itself: pointwise PV evaluation, the
//!   Gagliardo energy, the weak pairing.
//! * [`resolvent`] - the implicit step `u + lambda (-Delta_p)^s u^m = f`
//!   solved as strictly convex minimization, and time marching.
//! * [`selfsim`] - scaling transforms, rescaling to similarity variables,
//!   profile-equation residuals, Barenblatt extraction.
//! * [`barrier`] - piecewise global barriers: constant construction,
//!   supersolution residuals, trajectory domination.
//! * [`verify`] - property reports for every desk-checkable statement.
//! * [`exec`] - rayon/sequential dispatch used by the hot loops.

pub mod exec;
pub mod exponents;
pub mod grid;
pub mod kernel;
pub mod nonlocal;
pub mod quad;
pub mod resolvent;
pub mod barrier;
pub mod selfsim;
pub mod verify;
