//! Subcommand implementations.

pub mod eval;
pub mod generate;
pub mod gradcheck;
pub mod report;
pub mod train;
