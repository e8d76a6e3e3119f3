//! Scenario runner for the `lgbench` binary.

pub mod report;
pub mod run;
pub mod scenario;
pub mod slice;
