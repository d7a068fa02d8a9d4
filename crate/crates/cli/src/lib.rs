//! Library surface of the affectmap CLI: pipeline configuration, the
//! session engine, and training-data file handling. The binary in
//! `main.rs` is a thin layer over these modules so every stage stays
//! scriptable and testable.

pub mod config;
pub mod pipeline;
pub mod train;
