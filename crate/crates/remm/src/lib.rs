//! File formats, parallel runners and the command-line tool for
//! [`remm_core`].

pub mod cli;
pub mod config;
pub mod dataset_csv;
pub mod error;
pub mod fit_json;
pub mod select;
pub mod study;

pub use error::{CliError, CliResult};
