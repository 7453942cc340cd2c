//! Phasor-domain simulation of grids with grid-forming inverters.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod cli;
pub mod csv_out;
pub mod error;
pub mod grid;
pub mod presets;
pub mod scenario;
pub mod sg;
pub mod sim;
pub mod stability;
pub mod vsg;
