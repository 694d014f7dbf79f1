//! Numerical laboratory for the fractional p-Laplacian Gelfand problem on an
//! interval.
//!
//! The crate discretizes the Dirichlet problem for the fractional p-Laplacian
//! with homogeneous exterior condition, traces minimal-solution branches of
//! the semilinear family `(-Δ)_p^s u = λ f(u)`, brackets the extremal
//! parameter λ*, verifies stability quadratic forms and Kato-type
//! inequalities at the discrete level, and evaluates the closed-form
//! regularity thresholds and bootstrap recurrences that govern the extremal
//! function.
//!
//! Main entry points:
//! - [`mesh`]: uniform interval mesh and exact singular-kernel pair/tail
//!   weights ([`mesh::Mesh`], [`mesh::KernelWeights`]).
//! - [`operator`]: discrete operator application, Gagliardo energy and the
//!   linearized (weighted graph-Laplacian) matrix.
//! - [`solve`]: damped-Newton Dirichlet solver, monotone sub/supersolution
//!   iteration, Kato-inequality margins.
//! - [`branch`]: branch continuation in λ, λ* bracketing, extremal-function
//!   extrapolation.
//! - [`stability`]: stability ratio of the second-variation pencil and the
//!   cutoff-energy finite-difference cross-check.
//! - [`scalar`]: the nonlinearity family and the pure scalar machinery
//!   (odd powers, inequality oracles, supersolution transform).
//! - [`regularity`]: dimension thresholds, bootstrap exponent recurrences and
//!   empirical integral-estimate tables.
//! - [`runner`] / [`config`]: reproducible experiment harness behind the
//!   `fracgelfand` binary.
//!
//! Every computation is deterministic for a fixed configuration and seed;
//! see `examples/` for one runnable program per capability.

pub mod accum;
pub mod branch;
pub mod config;
pub mod mesh;
pub mod operator;
pub mod quad;
pub mod regularity;
pub mod runner;
pub mod scalar;
pub mod solve;
pub mod stability;

pub use mesh::{KernelWeights, Mesh};
pub use operator::{
    apply_operator, assemble_linearized_form, discrete_seminorm_p, DiscreteFunction,
};
pub use scalar::Nonlinearity;
pub use solve::{monotone_iteration, solve_dirichlet, IterationOutcome, SolveOptions};
