//! Benchmark orchestration: configuration parsing, the experiment runner
//! (grid search on validation classes, retrain, evaluate), and report
//! rendering. The binary in `main.rs` is a thin shell over this library.

pub mod config;
pub mod report;
pub mod runner;
