//! Library side of the `nncon` command-line tool. Each subcommand is a plain
//! function taking a parsed config and an output directory, so the same code
//! paths back the binary and the test suites.

pub mod config;
pub mod error;
pub mod evaluate;
pub mod gendata;
pub mod plot;
pub mod report;
pub mod shrink;
pub mod train;
pub mod verify;

pub use error::{CliError, CliResult};
