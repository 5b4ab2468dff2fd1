//! Dense matrices, reverse-mode differentiation and Adam.

mod adam;
pub mod linalg;
mod matrix;
mod ops;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use matrix::{dot, Matrix};
pub use ops::MatrixOps;
pub use params::{finite_diff_grad, grad, GradientRecord, ParameterSet};
pub use tape::{Adjoints, Tape, Var};
