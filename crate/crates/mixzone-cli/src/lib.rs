//! Library half of the `mixzone` command-line tool: scenario files,
//! trace serialization, report emission, and the command implementations
//! the binary dispatches to.

pub mod commands;
pub mod report;
pub mod scenario;
pub mod trace_io;
