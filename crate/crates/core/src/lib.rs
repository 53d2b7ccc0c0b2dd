//! Separable nonlinear least squares (SNLS) and nonlinear minimax fitting.
//!
//! The crate is organised bottom-up:
//!
//! * [`lls`]: dense linear least squares, Moore-Penrose pseudoinverse and
//!   column-space projectors, all built on the SVD.
//! * [`separable`]: models of the form `y ≈ Φ(α) a`, linear elimination and
//!   the variable-projection residual.
//! * [`nls`]: Gauss-Newton / Levenberg-Marquardt iteration plus the reduced
//!   (variable projection) and joint drivers for separable models.
//! * [`minimax`]: infinity-norm fitting through a sequence of weighted
//!   separable least-squares subproblems and subgradient multiplier updates.
//! * [`corpus`]: deterministic problem generators, analytic and brute-force
//!   oracles, and the reduced-vs-joint comparison harness.

pub mod corpus;
pub mod error;
pub mod lls;
pub mod minimax;
pub mod nls;
pub mod separable;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
