//! Independent oracles and the acceptance gates for `hep2-core`.

pub mod gates;
pub mod oracle;
pub mod tables;

pub use gates::{run_gates, GateOutcome, Status, SuiteOptions};
