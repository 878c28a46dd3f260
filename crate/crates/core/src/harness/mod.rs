//! Scenario files, experiment orchestration and report emission.

pub mod report;
pub mod run;
pub mod scenario;
pub mod topology;

pub use report::{compare, emit_batch, emit_comparison, emit_reports, Comparison};
pub use run::{run, run_failover_batch, BatchResult, RunError, RunResult};
pub use scenario::{load_scenario, parse_scenario, Mode, Scenario, ScenarioError};
