//! Std side of `transrev-core`: reading review corpora, the preprocessed
//! dataset directory, model files, run configuration, the parallel grid and
//! the `transrev` command line.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod model_file;
pub mod reader;

pub use error::{Error, Result};
