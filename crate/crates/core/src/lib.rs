// `!(x > 0.0)` guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod model;
pub mod plot;
pub mod protocol;
pub mod pulses;
pub mod solver;

pub use error::{Error, Result};
