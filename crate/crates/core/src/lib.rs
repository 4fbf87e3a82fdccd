// `!(x > 0.0)` rejects NaN along with the out-of-range values; index loops
// mirror the assembly formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod acceptance;
pub mod classical;
pub mod commands;
pub mod config;
pub mod diagnostics;
pub mod discretization;
pub mod error;
pub mod export;
pub mod fem;
pub mod linsolve;
pub mod manifest;
pub mod mesh;
pub mod quantum;
pub mod radial;
pub mod sparse;

pub use error::{Error, Result};
