//! Deflators, market prices of risk and numéraires for jump-diffusion
//! markets: existence tests, construction, exact simulation and
//! Monte-Carlo verification, plus term-structure consistency checks.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod model;
pub mod solver;
pub mod discalc;
pub mod sim;
pub mod verify;
pub mod termstruct;

pub use error::{Error, Result};
