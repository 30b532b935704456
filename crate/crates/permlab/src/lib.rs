//! CSV input, command line, and report rendering on top of `permlab-core`.

pub mod cli;
pub mod config;
pub mod csv_io;
pub mod exec;
pub mod report;

pub use csv_io::{load_csv, write_csv, Filter, LoadError};
pub use exec::RayonExecutor;
pub use report::{emit_report, Format};
