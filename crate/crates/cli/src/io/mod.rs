//! On-disk formats: JSONL cohorts, graph JSON, checkpoints, CSV logs.

pub mod checkpoint;
pub mod config;
pub mod csv;
pub mod graph_file;
pub mod jsonl;
