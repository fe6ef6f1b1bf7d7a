//! Principal-component emulator: an SVD basis of the centred ensemble plus
//! one Gaussian process per retained component score.

mod basis;
mod emulator;
mod gp;

pub use basis::*;
pub use emulator::*;
pub use gp::*;

pub(crate) use emulator::{read_matrix_csv, write_matrix_csv};
