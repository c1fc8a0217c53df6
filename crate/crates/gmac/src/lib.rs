//! Command-line harness around `gmac-core`: configuration, run directories,
//! checkpoints, CSV export and the tabular lab driver.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod export;
pub mod mdp_file;
pub mod run;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
