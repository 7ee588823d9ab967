//! Calculus on time scales and a fixed-point solver for abstract nonlinear
//! integro-dynamic equations
//!
//! ```text
//! y^Δ(s) = A y(s) + F(s, y(s), ∫_{s0}^{s} H(s, τ, y(τ)) Δτ),   y(s0) = y0
//! ```
//!
//! on bounded time scales, together with checks of the standard existence
//! hypotheses and finite-window almost-automorphy diagnostics.

pub mod automorphy;
pub mod calculus;
pub mod error;
pub mod expr;
pub mod semigroup;
pub mod solver;
pub mod timescale;

pub use error::{Error, Result};
