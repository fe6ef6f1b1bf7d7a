//! Study designs built on the emulation and calibration stages: pseudo
//! observations, aggregation and subsampling studies, cross-validation,
//! prior-sensitivity summaries and response projection.

pub mod benchmark;
mod cv;
mod ensemble;
mod pipeline;
mod projection;
mod studies;

pub use cv::*;
pub use ensemble::*;
pub use pipeline::*;
pub use projection::*;
pub use studies::*;
