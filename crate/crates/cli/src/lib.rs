//! Input loading, the benchmark manifest and the bench runner behind the
//! `streett` binary.

pub mod bench;
pub mod job;
pub mod manifest;

pub use job::{load_inputs, parse_assignments, read_text, CliError, JobOptions};
