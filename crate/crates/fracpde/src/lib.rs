//! One-sided fractional diffusion on the interval `[-1, 1]`.
//!
//! The library builds the boundary-modified Grünwald transition rate matrices
//! for six combinations of Dirichlet (`D`), Neumann (`N`) and reflecting
//! (`N*`) boundary conditions, evolves the associated forward (Fokker–Planck)
//! and backward (Feller) equations, simulates the matching finite-state
//! Markov jump processes, and ships a verification harness that checks every
//! testable identity (Grünwald coefficient algebra, rate-matrix structure,
//! semigroup contraction/positivity/duality, stopped-process resolvents,
//! approximate-power-function residuals, and mesh-refinement convergence).
//!
//! Entry points:
//! - [`fraccalc`]: Grünwald coefficients, power functions, fractional
//!   integrals, Mittag-Leffler-type series.
//! - [`grid`]: the uniform grid on `[-1,1]` and sampled functions on it.
//! - [`generators`]: rate matrices, interpolation matrices and the discrete
//!   transition operators.
//! - [`semigroup`]: `exp(tG)` evolution, resolvents, steady states.
//! - [`stochastic`]: exact jump-chain simulation and Monte Carlo estimation.
//! - [`verify`]: convergence studies and identity checks with JSON reports.
//! - [`cli`]: the command-line front end used by the `fracpde` binary.
//!
//! The `examples/` directory contains one runnable example per capability;
//! `cargo run --example solve_forward` is a good place to start.

pub mod cli;
mod error;
pub mod fraccalc;
pub mod generators;
pub mod grid;
mod linalg;
pub mod semigroup;
pub mod stochastic;
pub mod verify;

pub use error::{Error, Result};
pub use fraccalc::FractionalOrder;
pub use generators::BoundaryPair;
