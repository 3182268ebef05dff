//! Modified Euler scheme for SDEs driven by fractional Brownian motion with
//! Hurst index in (1/3, 1/2), together with the tree-indexed variational
//! recursions that reproduce its Malliavin derivatives and the pathwise
//! bound machinery built on a greedy control partition.
//!
//! Numerical kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the double-precision instantiation used by
//! the runner.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod bounds;
pub mod error;
pub mod grid_gaussian;
pub mod rough_lift;
pub mod runner;
pub mod scalar;
pub mod scheme;
pub mod tree_calculus;
pub mod trees;
pub mod variational;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Path = grid_gaussian::GridPath<f64>;
pub type Lift = rough_lift::RoughLift<f64>;
pub type Field = tree_calculus::VectorField<f64>;
pub type Config = scheme::SchemeConfig<f64>;
pub type Xi = variational::XiProcess<f64>;
pub type Stack = tree_calculus::DerivativeStack<f64>;
