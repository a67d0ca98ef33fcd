//! Scenario files, run orchestration and report rendering for the
//! `hyperalloc` command.

pub mod engine;
pub mod report;
pub mod scenario;

pub use engine::{run, EngineError, Mode, Model, RunOptions, RunReport};
pub use report::{emit_report, Format};
pub use scenario::{parse_scenario, Scenario, ScenarioErrors};
