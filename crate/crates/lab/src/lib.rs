//! File formats, training driver, benchmarks and command-line interface for
//! `dla-lab-core`.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod plot;
pub mod train;

pub use error::{LabError, LabResult};
