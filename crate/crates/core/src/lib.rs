// `!(a >= b)` comparisons deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod control;
pub mod curve;
pub mod error;
pub mod geometry;
pub mod ghf_solver;
pub mod obstacles;

pub use curve::Curve;
pub use error::{Error, Result};
pub mod systems;
