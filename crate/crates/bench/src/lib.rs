//! Benchmark harness: dataset loading, experimental conditions, query
//! execution and scoring.

pub mod cli;
pub mod condition;
pub mod dataset;
pub mod exec;
pub mod metrics;
pub mod report;
pub mod runner;
