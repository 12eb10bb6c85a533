//! File formats and the command-line tool around [`lumpkit_core`].
//!
//! * [`formats`]: transition matrices (csv, json), letter-bigram counts and
//!   partition files.
//! * [`report`]: selection reports (csv, json).
//! * [`cli`]: the `lumpkit` command.

pub mod cli;
mod error;
pub mod formats;
pub mod report;

pub use error::{CliError, Result};
