//! File formats, configuration loading, reports and the parallel Monte Carlo
//! driver around `smart-tmle-core`.

pub mod config_file;
pub mod csv_io;
pub mod error;
pub mod manifest;
pub mod montecarlo;
pub mod report;

pub use smart_tmle_core as core;

pub use error::IoError;
