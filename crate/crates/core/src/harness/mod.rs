//! Experiment orchestration, result tables and trace audits.

pub mod audit;
pub mod experiment;
pub mod report;
