//! Command-line front end: synthetic data, image ingestion, sampler runs,
//! diagnostics, reconstructions and comparison tables, all exchanged
//! through versioned CSV files.

pub mod commands;
pub mod error;
pub mod formats;
pub mod ingest;

pub use commands::{execute, Cli};
pub use error::{CliError, Result};
