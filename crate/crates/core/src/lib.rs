//! sipred: robust min-max and min-max-min optimal control and estimation,
//! solved as semi-infinite programs by iterative local reduction.
//!
//! The solver alternates between a finite-scenario master problem over the
//! decisions and an adversary search for uncertainty realizations that break
//! the current design. Existence constraints on smoothing variables are
//! handled by a nested inner reduction, so problems arising from smoothed
//! logical conditions (obstacle disjunctions, exact input saturation) and
//! from coupled state/uncertainty feasibility (set-membership estimation)
//! are all expressible in the same model.
//!
//! Everything numeric is generic over the [`scalar::Scalar`] float type with
//! `f64` defaults; the crate root re-exports the main double-precision types.
//!
//! # Layout
//!
//! - [`expr`]: expression trees with a text grammar, evaluator, and exact
//!   first derivatives.
//! - [`nlp`]: finite-dimensional smooth programs and the augmented-Lagrangian
//!   local solver with multi-start.
//! - [`model`]: the robust problem data model, validation, and the JSON
//!   problem/solution file formats.
//! - [`reduction`]: master construction, objective/constraint adversaries,
//!   scenario management, and the outer loop.
//! - [`examples`]: constructors for the three built-in problems plus
//!   brute-force oracles.
//! - [`audit`]: Monte-Carlo validation and certificate re-checks.

pub mod audit;
pub mod examples;
pub mod expr;
pub mod model;
pub mod nlp;
pub mod reduction;
pub mod scalar;

pub use expr::{Bindings, Expr, VarGroup, VarRef};
pub use scalar::Scalar;
