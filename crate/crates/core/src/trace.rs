//! The auditable record of one debate.

use std::collections::HashSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::analysis::{compute_tally, Tally};
use crate::backend::{FinishReason, TokenUsage};
use crate::config::{ModelConfig, PersonaSpec, ScenarioSpec};
use crate::prompt::{Phase, PromptBundle};

pub const TRACE_FORMAT_VERSION: &str = "adept-trace/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub seq: u32,
    pub phase: Phase,
    pub persona_name: String,
    pub prompt: PromptBundle,
    pub response: String,
    pub finish_reason: FinishReason,
    pub token_usage: Option<TokenUsage>,
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallotStatus {
    Valid,
    AbstainedNoTag,
    AbstainedInvalidOption,
}

impl BallotStatus {
    pub fn describe(self) -> &'static str {
        match self {
            BallotStatus::Valid => "valid",
            BallotStatus::AbstainedNoTag => "ABSTAINED (no valid vote tag)",
            BallotStatus::AbstainedInvalidOption => "ABSTAINED (vote for an option not on the ballot)",
        }
    }
}

/// A ballot reply that could not be counted and was followed by a corrective re-prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RejectedAttempt {
    pub prompt: PromptBundle,
    pub response: String,
    pub reason: String,
    pub token_usage: Option<TokenUsage>,
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
}

/// `prompt` and `raw_response` belong to the final attempt; earlier attempts
/// are kept in `rejected_attempts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ballot {
    pub persona_name: String,
    pub prompt: PromptBundle,
    pub raw_response: String,
    pub parsed_option: Option<u32>,
    pub justification: String,
    pub attempts: u32,
    pub status: BallotStatus,
    pub rejected_attempts: Vec<RejectedAttempt>,
    pub token_usage: Option<TokenUsage>,
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
}

impl Ballot {
    pub fn prompts(&self) -> impl Iterator<Item = &PromptBundle> {
        self.rejected_attempts.iter().map(|a| &a.prompt).chain(std::iter::once(&self.prompt))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryRecord {
    pub prompt: PromptBundle,
    pub text: String,
    pub token_usage: Option<TokenUsage>,
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebateTrace {
    pub format_version: String,
    pub status: RunStatus,
    pub abort_reason: Option<String>,
    pub scenario: ScenarioSpec,
    pub personas: Vec<PersonaSpec>,
    pub model_config: ModelConfig,
    pub template_version: String,
    pub utterances: Vec<Utterance>,
    pub ballots: Vec<Ballot>,
    pub tally: Option<Tally>,
    pub summary: Option<SummaryRecord>,
    pub warnings: Vec<String>,
    pub created_at: DateTime<Utc>,
}

impl DebateTrace {
    pub fn utterances_in(&self, phase: Phase) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.phase == phase)
    }

    pub fn summary_text(&self) -> Option<&str> {
        self.summary.as_ref().map(|s| s.text.as_str())
    }

    pub fn ballot_of(&self, persona_name: &str) -> Option<&Ballot> {
        self.ballots.iter().find(|b| b.persona_name == persona_name)
    }

    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete && self.tally.is_some() && self.summary.is_some()
    }

    /// Number of backend exchanges recorded in the trace.
    pub fn exchange_count(&self) -> usize {
        self.utterances.len()
            + self.ballots.iter().map(|b| 1 + b.rejected_attempts.len()).sum::<usize>()
            + usize::from(self.summary.is_some())
    }

    /// Checks every structural protocol invariant of a complete trace and
    /// returns a description of each violation found.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let n = self.personas.len();
        if self.format_version != TRACE_FORMAT_VERSION {
            v.push(format!("format_version {} != {TRACE_FORMAT_VERSION}", self.format_version));
        }
        if self.status != RunStatus::Complete {
            v.push("trace is not complete".into());
        }

        if self.utterances.len() != 2 * n {
            v.push(format!("{} utterances for {n} personas", self.utterances.len()));
        }
        if self.ballots.len() != n {
            v.push(format!("{} ballots for {n} personas", self.ballots.len()));
        }
        for persona in &self.personas {
            for phase in [Phase::Opening, Phase::Rebuttal] {
                let count = self
                    .utterances
                    .iter()
                    .filter(|u| u.phase == phase && u.persona_name == persona.name)
                    .count();
                if count != 1 {
                    v.push(format!("{} has {count} {phase} utterances", persona.name));
                }
            }
            let ballots = self.ballots.iter().filter(|b| b.persona_name == persona.name).count();
            if ballots != 1 {
                v.push(format!("{} has {ballots} ballots", persona.name));
            }
        }
        let names: HashSet<&str> = self.personas.iter().map(|p| p.name.as_str()).collect();
        for u in &self.utterances {
            if !names.contains(u.persona_name.as_str()) {
                v.push(format!("utterance from non-member {}", u.persona_name));
            }
            if !matches!(u.phase, Phase::Opening | Phase::Rebuttal) {
                v.push(format!("utterance seq {} has non-dialogue phase {}", u.seq, u.phase));
            }
            if u.prompt.phase != u.phase || u.prompt.persona_name != u.persona_name {
                v.push(format!("utterance seq {} prompt metadata mismatch", u.seq));
            }
        }

        // seq is 0-based and strictly increasing; phases never go backwards
        for (i, u) in self.utterances.iter().enumerate() {
            if u.seq as usize != i {
                v.push(format!("utterance at index {i} has seq {}", u.seq));
            }
        }
        for w in self.utterances.windows(2) {
            if w[1].phase < w[0].phase {
                v.push(format!("phase order violated at seq {}", w[1].seq));
            }
        }

        // timestamps: no call of a later phase starts before the earlier phase ends
        let opening_end = self.utterances_in(Phase::Opening).map(|u| u.ended_at).max();
        let rebuttal_start = self.utterances_in(Phase::Rebuttal).map(|u| u.started_at).min();
        let rebuttal_end = self.utterances_in(Phase::Rebuttal).map(|u| u.ended_at).max();
        let ballot_start = self
            .ballots
            .iter()
            .map(|b| b.rejected_attempts.first().map(|a| a.started_at).unwrap_or(b.started_at))
            .min();
        if let (Some(a), Some(b)) = (opening_end, rebuttal_start) {
            if b < a {
                v.push("a rebuttal call started before the opening phase finished".into());
            }
        }
        if let (Some(a), Some(b)) = (rebuttal_end, ballot_start) {
            if b < a {
                v.push("a ballot call started before the rebuttal phase finished".into());
            }
        }

        // containment: every rebuttal and ballot prompt embeds all openings
        let openings: Vec<&Utterance> = self.utterances_in(Phase::Opening).collect();
        let rebuttals: Vec<&Utterance> = self.utterances_in(Phase::Rebuttal).collect();
        for r in &rebuttals {
            for o in &openings {
                if !r.prompt.user_content().contains(&o.response) {
                    v.push(format!("rebuttal prompt of {} lacks opening of {}", r.persona_name, o.persona_name));
                }
            }
        }
        for b in &self.ballots {
            for prompt in b.prompts() {
                for u in openings.iter().chain(rebuttals.iter()) {
                    if !prompt.user_content().contains(&u.response) {
                        v.push(format!(
                            "ballot prompt of {} lacks {} of {}",
                            b.persona_name, u.phase, u.persona_name
                        ));
                    }
                }
            }
        }

        // secrecy: no ballot reply leaks into another persona's ballot prompt
        for a in &self.ballots {
            let replies = a
                .rejected_attempts
                .iter()
                .map(|r| r.response.as_str())
                .chain(std::iter::once(a.raw_response.as_str()));
            for reply in replies {
                for b in self.ballots.iter().filter(|b| b.persona_name != a.persona_name) {
                    if b.prompts().any(|p| p.contains(reply)) {
                        v.push(format!("ballot of {} visible to {}", a.persona_name, b.persona_name));
                    }
                }
            }
        }

        for b in &self.ballots {
            let attempts = 1 + b.rejected_attempts.len() as u32;
            if b.attempts != attempts {
                v.push(format!("ballot of {} records {} attempts, logs {attempts}", b.persona_name, b.attempts));
            }
            match (b.status, b.parsed_option) {
                (BallotStatus::Valid, Some(id)) => {
                    if self.scenario.option(id).is_none() {
                        v.push(format!("ballot of {} votes for unknown option {id}", b.persona_name));
                    }
                }
                (BallotStatus::Valid, None) => v.push(format!("valid ballot of {} has no option", b.persona_name)),
                (_, Some(_)) => v.push(format!("abstained ballot of {} has an option", b.persona_name)),
                (_, None) => {}
            }
        }

        match &self.tally {
            None => v.push("tally missing".into()),
            Some(t) => {
                if t.valid_count + t.abstentions != n as u32 {
                    v.push(format!("tally covers {} of {n} ballots", t.valid_count + t.abstentions));
                }
                if t.counts.values().sum::<u32>() != t.valid_count {
                    v.push("tally counts do not sum to valid_count".into());
                }
                if *t != compute_tally(&self.ballots, &self.scenario.options) {
                    v.push("tally does not match ballots".into());
                }
            }
        }
        if self.summary.is_none() {
            v.push("summary missing".into());
        }
        v
    }
}
