//! Monte Carlo evaluation of intrinsic Hopf-Lax value functions for
//! Hamilton-Jacobi equations with a Caputo time derivative.
//!
//! The value function is
//!
//! ```text
//! u(x, t) = E[ min_z { E_t L((f(x) - a(x, z)) / E_t) + g(z) } ]
//! ```
//!
//! where `E_t` is the inverse of a one-sided stable subordinator, `f` is a
//! section of a quotient map, `a(x, z)` is the nearest point of the fiber over
//! `z`, and `g = max_j f_j`. The crate samples `E_t`, evaluates `u` on a
//! space-time lattice with standard errors, and checks the analytic
//! properties of `u` numerically with explicit tolerance budgets.

// `!(x < y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod duality;
pub mod field;
pub mod fractional;
pub mod geometry;
pub mod io;
pub mod quadrature;
pub mod rng;
pub mod stable;
pub mod verify;

pub use duality::{GridFunction, LagrangianPair};
pub use field::{EvaluationConfig, ValueField};
pub use fractional::TimeSeries;
pub use geometry::QuotientModel;
pub use stable::FractionalOrder;
pub use verify::{PropertyCheck, VerificationReport};
