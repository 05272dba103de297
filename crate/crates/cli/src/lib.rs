//! Scenario loading, mission batches, statistics and reports behind the
//! `umbrella` binary.

pub mod experiment;
pub mod report;
pub mod scenario;
pub mod stats;
