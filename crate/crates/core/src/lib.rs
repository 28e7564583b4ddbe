//! Model-based offline policy selection with locally misspecified dynamics
//! models: exact tabular machinery, occupancy and ratio estimation,
//! pessimistic lower bounds, and the selection procedures built on them.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod hard;
pub mod lqr;
pub mod mdp;
pub mod rng;
pub mod selector;

pub use error::{Error, Result};
