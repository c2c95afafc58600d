//! Runs one panel through opening statements, one rebuttal round and a secret
//! ballot, then tallies the votes and asks the built-in summariser for an
//! executive summary.
//!
//! Phases run strictly in order. Inside a phase the calls are independent,
//! so they may be issued concurrently when the model configuration asks for
//! it; results are always assembled in panel order, which keeps the trace
//! identical either way.

pub mod vote;

use std::collections::HashSet;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::analysis::compute_tally;
use crate::backend::{Backend, BackendError, CallContext, CompletionRequest, CompletionResult, FinishReason};
use crate::config::{ModelConfig, PersonaSpec, ScenarioSpec};
use crate::par::map_blocking;
use crate::prompt::{
    compose_ballot, compose_ballot_retry, compose_opening, compose_rebuttal, compose_summary, template_version, Phase,
    PromptBundle, PromptError, SUMMARISER_NAME,
};
use crate::trace::{
    Ballot, BallotStatus, DebateTrace, RejectedAttempt, RunStatus, SummaryRecord, Utterance, TRACE_FORMAT_VERSION,
};

pub use vote::{justification, parse_vote, ParsedVote, VoteError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid debate input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    /// The backend failed; `trace` holds everything recorded up to that point.
    #[error("debate aborted: {source}")]
    Aborted {
        trace: Box<DebateTrace>,
        #[source]
        source: BackendError,
    },
}

#[derive(Debug, Error)]
pub enum PhaseError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{error}")]
    Backend {
        completed: Vec<Utterance>,
        error: BackendError,
    },
}

#[derive(Debug, Error)]
#[error("{error}")]
pub struct BallotError {
    pub completed: Vec<Ballot>,
    pub warnings: Vec<String>,
    pub error: BackendError,
}

struct Exchange {
    result: CompletionResult,
    started_at: DateTime<Utc>,
    ended_at: DateTime<Utc>,
}

fn exchange(backend: &dyn Backend, config: &ModelConfig, bundle: &PromptBundle) -> Result<Exchange, BackendError> {
    let request = CompletionRequest::from_bundle(bundle, config);
    let started_at = Utc::now();
    let result = backend.complete(&CallContext::of(bundle), &request)?;
    Ok(Exchange {
        result,
        started_at,
        ended_at: Utc::now(),
    })
}

fn truncation_warning(persona: &str, phase: Phase, reason: FinishReason) -> Option<String> {
    (reason == FinishReason::Length).then(|| format!("{phase} response of {persona} was cut off at the output token limit"))
}

fn check_panel(personas: &[PersonaSpec]) -> Result<(), RunError> {
    if personas.len() < 2 {
        return Err(RunError::InvalidInput(format!(
            "a debate needs at least 2 personas, got {}",
            personas.len()
        )));
    }
    let mut names = HashSet::new();
    for p in personas {
        if p.name == SUMMARISER_NAME {
            return Err(RunError::InvalidInput(format!("persona name `{SUMMARISER_NAME}` is reserved")));
        }
        if !names.insert(p.name.as_str()) {
            return Err(RunError::InvalidInput(format!("duplicate persona name `{}`", p.name)));
        }
    }
    Ok(())
}

/// Runs one dialogue phase (opening or rebuttal). `prior` must hold the
/// complete opening phase when `phase` is rebuttal. Every prompt is composed
/// before the first backend call, so an incomplete `prior` fails without
/// touching the backend.
pub fn run_dialogue_phase(
    phase: Phase,
    scenario: &ScenarioSpec,
    personas: &[PersonaSpec],
    prior: &[Utterance],
    backend: &dyn Backend,
    config: &ModelConfig,
) -> Result<Vec<Utterance>, PhaseError> {
    let prompts: Vec<PromptBundle> = match phase {
        Phase::Opening => personas.iter().map(|p| compose_opening(scenario, p)).collect(),
        Phase::Rebuttal => {
            let openings: Vec<Utterance> = prior.iter().filter(|u| u.phase == Phase::Opening).cloned().collect();
            personas
                .iter()
                .map(|p| compose_rebuttal(scenario, p, personas, &openings))
                .collect::<Result<_, _>>()?
        }
        other => {
            return Err(PhaseError::Prompt(PromptError::IncompletePhase {
                phase: other,
                detail: "not a dialogue phase".into(),
            }))
        }
    };

    let results = map_blocking(config.parallel_independent_calls, &prompts, |bundle| {
        exchange(backend, config, bundle)
    });

    let base = prior.len() as u32;
    let mut completed = Vec::with_capacity(personas.len());
    let mut first_error = None;
    for (bundle, result) in prompts.into_iter().zip(results) {
        match result {
            Ok(x) => completed.push(Utterance {
                seq: base + completed.len() as u32,
                phase,
                persona_name: bundle.persona_name.clone(),
                prompt: bundle,
                response: x.result.text,
                finish_reason: x.result.finish_reason,
                token_usage: x.result.token_usage,
                started_at: x.started_at,
                ended_at: x.ended_at,
            }),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        None => Ok(completed),
        Some(error) => Err(PhaseError::Backend { completed, error }),
    }
}

fn failure_reason(err: &VoteError) -> String {
    match err {
        VoteError::NoVoteFound => "it contained no well-formed vote element".to_string(),
        VoteError::InvalidOption { raw, .. } => format!("it voted for `{raw}`, which is not a listed option number"),
    }
}

fn cast_ballot(
    scenario: &ScenarioSpec,
    persona: &PersonaSpec,
    prompt: PromptBundle,
    backend: &dyn Backend,
    config: &ModelConfig,
) -> Result<(Ballot, Vec<String>), BackendError> {
    let mut warnings = Vec::new();
    let mut rejected = Vec::new();
    let mut current = prompt;
    loop {
        let x = exchange(backend, config, &current)?;
        warnings.extend(truncation_warning(&persona.name, Phase::Ballot, x.result.finish_reason));
        let parsed = parse_vote(&x.result.text, &scenario.options);
        let attempts = rejected.len() as u32 + 1;
        let (parsed_option, status) = match &parsed {
            Ok(v) => {
                warnings.extend(v.duplicate_warning(&persona.name));
                (Some(v.option), BallotStatus::Valid)
            }
            Err(e) if rejected.is_empty() => {
                let reason = failure_reason(e);
                let retry = compose_ballot_retry(scenario, &current, &reason);
                rejected.push(RejectedAttempt {
                    prompt: std::mem::replace(&mut current, retry),
                    response: x.result.text,
                    reason,
                    token_usage: x.result.token_usage,
                    started_at: x.started_at,
                    ended_at: x.ended_at,
                });
                continue;
            }
            Err(VoteError::NoVoteFound) => (None, BallotStatus::AbstainedNoTag),
            Err(VoteError::InvalidOption { .. }) => (None, BallotStatus::AbstainedInvalidOption),
        };
        if status != BallotStatus::Valid {
            warnings.push(format!("{} abstained: {}", persona.name, status.describe()));
        }
        return Ok((
            Ballot {
                persona_name: persona.name.clone(),
                prompt: current,
                justification: justification(&x.result.text),
                raw_response: x.result.text,
                parsed_option,
                attempts,
                status,
                rejected_attempts: rejected,
                token_usage: x.result.token_usage,
                started_at: x.started_at,
                ended_at: x.ended_at,
            },
            warnings,
        ));
    }
}

/// Secret ballot: each prompt carries the full dialogue and nothing from any
/// other ballot. A reply without a usable vote gets exactly one corrective
/// re-prompt before it is recorded as an abstention.
pub fn collect_ballots(
    scenario: &ScenarioSpec,
    personas: &[PersonaSpec],
    dialogue: &[Utterance],
    backend: &dyn Backend,
    config: &ModelConfig,
) -> Result<(Vec<Ballot>, Vec<String>), BallotError> {
    let openings: Vec<Utterance> = dialogue.iter().filter(|u| u.phase == Phase::Opening).cloned().collect();
    let rebuttals: Vec<Utterance> = dialogue.iter().filter(|u| u.phase == Phase::Rebuttal).cloned().collect();
    let prompts: Vec<(usize, PromptBundle)> = personas
        .iter()
        .enumerate()
        .map(|(i, p)| compose_ballot(scenario, p, personas, &openings, &rebuttals).map(|b| (i, b)))
        .collect::<Result<_, _>>()
        .map_err(|e| BallotError {
            completed: Vec::new(),
            warnings: Vec::new(),
            error: BackendError::new(crate::backend::BackendErrorKind::MalformedRequest, e.to_string()),
        })?;

    let results = map_blocking(config.parallel_independent_calls, &prompts, |(i, prompt)| {
        cast_ballot(scenario, &personas[*i], prompt.clone(), backend, config)
    });

    let mut ballots = Vec::with_capacity(personas.len());
    let mut warnings = Vec::new();
    let mut first_error = None;
    for result in results {
        match result {
            Ok((ballot, w)) => {
                ballots.push(ballot);
                warnings.extend(w);
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        None => Ok((ballots, warnings)),
        Some(error) => Err(BallotError {
            completed: ballots,
            warnings,
            error,
        }),
    }
}

/// Runs the full protocol and returns a complete trace. On a backend failure
/// the returned error carries the partial trace, marked aborted.
pub fn run_debate(
    scenario: &ScenarioSpec,
    personas: &[PersonaSpec],
    config: &ModelConfig,
    backend: &dyn Backend,
) -> Result<DebateTrace, RunError> {
    check_panel(personas)?;
    let mut trace = DebateTrace {
        format_version: TRACE_FORMAT_VERSION.to_string(),
        status: RunStatus::Complete,
        abort_reason: None,
        scenario: scenario.clone(),
        personas: personas.to_vec(),
        model_config: config.clone(),
        template_version: template_version().to_string(),
        utterances: Vec::new(),
        ballots: Vec::new(),
        tally: None,
        summary: None,
        warnings: Vec::new(),
        created_at: Utc::now(),
    };
    let abort = |mut trace: DebateTrace, source: BackendError| {
        trace.status = RunStatus::Aborted;
        trace.abort_reason = Some(source.to_string());
        tracing::error!("debate aborted: {source}");
        RunError::Aborted {
            trace: Box::new(trace),
            source,
        }
    };

    for phase in [Phase::Opening, Phase::Rebuttal] {
        match run_dialogue_phase(phase, scenario, personas, &trace.utterances, backend, config) {
            Ok(utterances) => {
                for u in &utterances {
                    trace
                        .warnings
                        .extend(truncation_warning(&u.persona_name, u.phase, u.finish_reason));
                }
                trace.utterances.extend(utterances);
            }
            Err(PhaseError::Prompt(e)) => return Err(e.into()),
            Err(PhaseError::Backend { completed, error }) => {
                trace.utterances.extend(completed);
                return Err(abort(trace, error));
            }
        }
    }

    match collect_ballots(scenario, personas, &trace.utterances, backend, config) {
        Ok((ballots, warnings)) => {
            trace.ballots = ballots;
            trace.warnings.extend(warnings);
        }
        Err(BallotError {
            completed,
            warnings,
            error,
        }) => {
            trace.ballots = completed;
            trace.warnings.extend(warnings);
            return Err(abort(trace, error));
        }
    }
    trace.tally = Some(compute_tally(&trace.ballots, &scenario.options));

    let prompt = compose_summary(&trace)?;
    match exchange(backend, config, &prompt) {
        Ok(x) => {
            trace
                .warnings
                .extend(truncation_warning(SUMMARISER_NAME, Phase::Summary, x.result.finish_reason));
            trace.summary = Some(SummaryRecord {
                prompt,
                text: x.result.text,
                token_usage: x.result.token_usage,
                started_at: x.started_at,
                ended_at: x.ended_at,
            });
        }
        Err(e) => return Err(abort(trace, e)),
    }
    Ok(trace)
}
