//! Offline re-execution of a persisted trace.

use thiserror::Error;

use crate::backend::{Script, ScriptError, ScriptedBackend};
use crate::engine::{run_debate, RunError};
use crate::persistence::canonical_hash;
use crate::prompt::template_version;
use crate::trace::DebateTrace;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot replay: {0}")]
    Script(#[from] ScriptError),
    #[error("replay failed: {0}")]
    Run(#[from] RunError),
}

#[derive(Debug)]
pub struct ReplayOutcome {
    pub original_hash: String,
    pub replay_hash: String,
    pub trace: DebateTrace,
    /// Set when the trace was recorded with a different template set.
    pub template_drift: Option<String>,
}

impl ReplayOutcome {
    pub fn matches(&self) -> bool {
        self.original_hash == self.replay_hash
    }
}

/// Re-runs the recorded panel against a strict scripted backend built from the
/// trace's own responses. Prompts are recomposed from the current templates
/// and checked against the recorded digests.
pub fn replay_trace(original: &DebateTrace, parallel: bool) -> Result<ReplayOutcome, ReplayError> {
    let backend = ScriptedBackend::new(Script::from_trace(original)?).strict();
    let mut config = original.model_config.clone();
    config.parallel_independent_calls = parallel;
    let mut trace = run_debate(&original.scenario, &original.personas, &config, &backend)?;
    // the execution mode is not part of what was decided
    trace.model_config.parallel_independent_calls = original.model_config.parallel_independent_calls;
    let template_drift = (original.template_version != template_version())
        .then(|| format!("recorded with {}, replayed with {}", original.template_version, template_version()));
    Ok(ReplayOutcome {
        original_hash: canonical_hash(original),
        replay_hash: canonical_hash(&trace),
        trace,
        template_drift,
    })
}
