//! Multi-persona deliberation engine: panels of moral personas debate a fixed
//! set of policy options, vote by secret ballot and leave an auditable trace.

pub mod analysis;
pub mod backend;
pub mod batch;
pub mod config;
pub mod engine;
pub mod par;
pub mod persistence;
pub mod prompt;
pub mod replay;
pub mod trace;

#[cfg(test)]
mod testutil;

pub use analysis::{compare, compute_tally, ComparisonReport, Tally};
pub use config::{ModelConfig, PersonaSpec, PolicyOption, ScenarioSpec};
pub use engine::{run_debate, RunError};
pub use prompt::Phase;
pub use trace::DebateTrace;
