// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod model;
pub mod optimizer;
pub mod photophysics;
pub mod protocols;
pub mod pulse;
pub mod runner;
pub mod sensitivity;
pub mod spin;

pub use error::{Error, Result};
