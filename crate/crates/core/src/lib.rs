//! Local SQP for conic constrained programs `min φ0(x) s.t. f(x) ∈ Θ` and
//! second-order stability diagnostics at KKT points.

pub mod cone;
pub mod conic_qp;
pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod harness;
pub mod linalg;
pub mod polyhedral;
pub mod problem;
pub mod semismooth;
pub mod sqp;

pub use error::{Error, Result};
pub use problem::{KKTPair, KKTResidual, ProblemSpec};
