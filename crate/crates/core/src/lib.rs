//! Calibration of gridded simulator output against observations using a
//! principal-component emulator and a reduced-rank discrepancy model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod error;
pub mod experiments;
pub mod calibrator;
pub mod discrepancy;
pub mod field_grid;
pub mod linalg;
pub mod pc_emulator;

pub use error::{Error, Result};
