//! Linear self-attention and bilinear transformers for in-context learning
//! of quadratic and polynomial functions, with closed-form constructions,
//! exact Gaussian-moment oracles and a small training loop.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); exact
//! moment computations use rational coefficients. Experiments run in `f64`.

pub mod constructions;
pub mod error;
pub mod model;
pub mod numerics;
pub mod oracles;
pub mod scalar;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = numerics::Matrix<f64>;
pub type Matrix32 = numerics::Matrix<f32>;
pub type Model64 = model::TransformerModel<f64>;
pub type Model32 = model::TransformerModel<f32>;
pub type PromptBatch64 = tasks::PromptBatch<f64>;
pub type RationalPolynomial = oracles::SparsePolynomial<oracles::Rational>;
pub type RealPolynomial = oracles::SparsePolynomial<f64>;
