//! Message composition for every persona and phase.
//!
//! Template text lives in `templates/` and is compiled in. The template
//! version is derived from a digest of that text, so any wording change
//! produces a new version string in every trace written afterwards.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::render_tally_lines;
use crate::config::{PersonaSpec, ScenarioSpec};
use crate::trace::{Ballot, BallotStatus, DebateTrace, Utterance};

/// Name under which the built-in summariser appears in traces and scripts.
pub const SUMMARISER_NAME: &str = "Summariser";

const TEMPLATES: &[(&str, &str)] = &[
    ("system", include_str!("../templates/system.txt")),
    ("context", include_str!("../templates/context.txt")),
    ("opening", include_str!("../templates/opening.txt")),
    ("rebuttal", include_str!("../templates/rebuttal.txt")),
    ("ballot", include_str!("../templates/ballot.txt")),
    ("ballot_retry", include_str!("../templates/ballot_retry.txt")),
    ("summary_system", include_str!("../templates/summary_system.txt")),
    ("summary", include_str!("../templates/summary.txt")),
];

fn template(name: &str) -> &'static str {
    TEMPLATES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .unwrap_or_else(|| panic!("unknown template {name}"))
}

/// `adept-tpl/1+<12 hex digits of the template digest>`.
pub fn template_version() -> &'static str {
    static VERSION: OnceLock<String> = OnceLock::new();
    VERSION.get_or_init(|| {
        let mut h = Sha256::new();
        for (name, text) in TEMPLATES {
            h.update(name.as_bytes());
            h.update([0u8]);
            h.update(text.as_bytes());
            h.update([0u8]);
        }
        format!("adept-tpl/1+{}", &hex::encode(h.finalize())[..12])
    })
}

/// Single-pass `{{key}}` substitution. Substituted values are never re-scanned,
/// so persona or transcript text containing braces is emitted verbatim.
fn render(tpl: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(tpl.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = tpl;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").expect("unterminated placeholder in template");
        let key = &after[..end];
        let value = vars
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("no value for placeholder {key}"));
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: String) -> Self {
        ChatMessage { role: Role::System, content }
    }
    pub fn user(content: String) -> Self {
        ChatMessage { role: Role::User, content }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Opening,
    Rebuttal,
    Ballot,
    Summary,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Opening => "opening",
            Phase::Rebuttal => "rebuttal",
            Phase::Ballot => "ballot",
            Phase::Summary => "summary",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptBundle {
    pub persona_name: String,
    pub phase: Phase,
    pub messages: Vec<ChatMessage>,
    pub template_version: String,
}

impl PromptBundle {
    pub fn user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// True if any message contains `needle`.
    pub fn contains(&self, needle: &str) -> bool {
        self.messages.iter().any(|m| m.content.contains(needle))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("{phase} phase incomplete: {detail}")]
    IncompletePhase { phase: Phase, detail: String },
    #[error("trace incomplete: {0}")]
    IncompleteTrace(String),
}

fn bullet_list(items: &[String]) -> String {
    items.iter().map(|s| format!("- {s}\n")).collect()
}

/// Renders every present persona field under a labeled heading, in schema order.
pub fn build_system_message(persona: &PersonaSpec) -> String {
    let mut profile = String::new();
    let mut section = |heading: &str, body: String| {
        profile.push_str("## ");
        profile.push_str(heading);
        profile.push('\n');
        profile.push_str(&body);
        if !body.ends_with('\n') {
            profile.push('\n');
        }
        profile.push('\n');
    };
    section("Name", persona.name.clone());
    section("Principle", persona.principle.clone());
    section("Approach", bullet_list(&persona.approach));
    section("Core Questions", bullet_list(&persona.core_questions));
    section("Decision Criteria", bullet_list(&persona.decision_criteria));
    if let Some(style) = &persona.deliberation_style {
        section("Deliberation Style", style.clone());
    }
    if !persona.forbidden_moves.is_empty() {
        section("Forbidden Moves", bullet_list(&persona.forbidden_moves));
    }
    if let Some(items) = persona.strengths.as_deref().filter(|v| !v.is_empty()) {
        section("Strengths", bullet_list(items));
    }
    if let Some(items) = persona.challenges.as_deref().filter(|v| !v.is_empty()) {
        section("Challenges", bullet_list(items));
    }
    if let Some(items) = persona.citations.as_deref().filter(|v| !v.is_empty()) {
        section("Key Citations", bullet_list(items));
    }

    let forbidden_clause = if persona.forbidden_moves.is_empty() {
        ""
    } else {
        " Never make any of your forbidden moves."
    };
    render(
        template("system"),
        &[("name", &persona.name), ("profile", &profile), ("forbidden_clause", forbidden_clause)],
    )
}

fn render_options(scenario: &ScenarioSpec) -> String {
    scenario
        .options
        .iter()
        .map(|o| format!("Option {} - {}: {}\n", o.id, o.label, o.description))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_context(scenario: &ScenarioSpec) -> String {
    render(
        template("context"),
        &[
            ("title", &scenario.title),
            ("narrative", &scenario.narrative),
            ("options", &render_options(scenario)),
        ],
    )
}

fn legal_ids(scenario: &ScenarioSpec) -> String {
    scenario.option_ids().map(|id| id.to_string()).collect::<Vec<_>>().join(", ")
}

/// Header line used for every embedded utterance.
pub fn attribution(persona_name: &str, phase: Phase) -> String {
    format!("\u{2014} {persona_name} ({phase}):")
}

fn embed(persona_name: &str, phase: Phase, text: &str) -> String {
    let mut s = attribution(persona_name, phase);
    s.push('\n');
    s.push_str(text);
    if !text.ends_with('\n') {
        s.push('\n');
    }
    s.push('\n');
    s
}

/// Orders `utterances` by panel, requiring exactly one per panel member.
fn ordered_phase<'u>(
    panel: &[PersonaSpec],
    utterances: &'u [Utterance],
    phase: Phase,
) -> Result<Vec<&'u Utterance>, PromptError> {
    let mut out = Vec::with_capacity(panel.len());
    for persona in panel {
        let mut found = utterances.iter().filter(|u| u.persona_name == persona.name && u.phase == phase);
        let first = found.next().ok_or_else(|| PromptError::IncompletePhase {
            phase,
            detail: format!("missing {phase} utterance for {}", persona.name),
        })?;
        if found.next().is_some() {
            return Err(PromptError::IncompletePhase {
                phase,
                detail: format!("more than one {phase} utterance for {}", persona.name),
            });
        }
        out.push(first);
    }
    if let Some(stray) = utterances
        .iter()
        .find(|u| u.phase != phase || !panel.iter().any(|p| p.name == u.persona_name))
    {
        return Err(PromptError::IncompletePhase {
            phase,
            detail: format!("unexpected {} utterance from {}", stray.phase, stray.persona_name),
        });
    }
    Ok(out)
}

fn render_dialogue(utterances: &[&Utterance]) -> String {
    utterances.iter().map(|u| embed(&u.persona_name, u.phase, &u.response)).collect()
}

fn bundle(persona_name: &str, phase: Phase, system: String, user: String) -> PromptBundle {
    PromptBundle {
        persona_name: persona_name.to_string(),
        phase,
        messages: vec![ChatMessage::system(system), ChatMessage::user(user)],
        template_version: template_version().to_string(),
    }
}

pub fn compose_opening(scenario: &ScenarioSpec, persona: &PersonaSpec) -> PromptBundle {
    let user = render(
        template("opening"),
        &[("context", &render_context(scenario)), ("name", &persona.name)],
    );
    bundle(&persona.name, Phase::Opening, build_system_message(persona), user)
}

pub fn compose_rebuttal(
    scenario: &ScenarioSpec,
    persona: &PersonaSpec,
    panel: &[PersonaSpec],
    openings: &[Utterance],
) -> Result<PromptBundle, PromptError> {
    let openings = ordered_phase(panel, openings, Phase::Opening)?;
    let user = render(
        template("rebuttal"),
        &[
            ("context", &render_context(scenario)),
            ("openings", &render_dialogue(&openings)),
            ("name", &persona.name),
        ],
    );
    Ok(bundle(&persona.name, Phase::Rebuttal, build_system_message(persona), user))
}

pub fn compose_ballot(
    scenario: &ScenarioSpec,
    persona: &PersonaSpec,
    panel: &[PersonaSpec],
    openings: &[Utterance],
    rebuttals: &[Utterance],
) -> Result<PromptBundle, PromptError> {
    let openings = ordered_phase(panel, openings, Phase::Opening)?;
    let rebuttals = ordered_phase(panel, rebuttals, Phase::Rebuttal)?;
    let user = render(
        template("ballot"),
        &[
            ("context", &render_context(scenario)),
            ("openings", &render_dialogue(&openings)),
            ("rebuttals", &render_dialogue(&rebuttals)),
            ("name", &persona.name),
            ("legal_ids", &legal_ids(scenario)),
        ],
    );
    Ok(bundle(&persona.name, Phase::Ballot, build_system_message(persona), user))
}

/// The corrective re-prompt sent once when a ballot reply carries no usable vote.
pub fn compose_ballot_retry(scenario: &ScenarioSpec, original: &PromptBundle, reason: &str) -> PromptBundle {
    let mut retry = original.clone();
    let note = render(template("ballot_retry"), &[("reason", reason), ("legal_ids", &legal_ids(scenario))]);
    if let Some(user) = retry.messages.iter_mut().rev().find(|m| m.role == Role::User) {
        user.content.push_str(&note);
    }
    retry
}

fn render_ballot_entry(ballot: &Ballot) -> String {
    let vote = match (ballot.status, ballot.parsed_option) {
        (BallotStatus::Valid, Some(id)) => format!("Option {id}"),
        _ => ballot.status.describe().to_string(),
    };
    format!(
        "{}\nVote: {vote}\nJustification: {}\n\n",
        attribution(&ballot.persona_name, Phase::Ballot),
        ballot.justification
    )
}

pub fn compose_summary(trace: &DebateTrace) -> Result<PromptBundle, PromptError> {
    let tally = trace
        .tally
        .as_ref()
        .ok_or_else(|| PromptError::IncompleteTrace("tally has not been computed".into()))?;
    let openings: Vec<Utterance> = trace.utterances_in(Phase::Opening).cloned().collect();
    let rebuttals: Vec<Utterance> = trace.utterances_in(Phase::Rebuttal).cloned().collect();
    let openings = ordered_phase(&trace.personas, &openings, Phase::Opening)
        .map_err(|e| PromptError::IncompleteTrace(e.to_string()))?;
    let rebuttals = ordered_phase(&trace.personas, &rebuttals, Phase::Rebuttal)
        .map_err(|e| PromptError::IncompleteTrace(e.to_string()))?;
    let mut ballots = String::new();
    for persona in &trace.personas {
        let ballot = trace
            .ballots
            .iter()
            .find(|b| b.persona_name == persona.name)
            .ok_or_else(|| PromptError::IncompleteTrace(format!("missing ballot for {}", persona.name)))?;
        ballots.push_str(&render_ballot_entry(ballot));
    }
    let user = render(
        template("summary"),
        &[
            ("context", &render_context(&trace.scenario)),
            ("openings", &render_dialogue(&openings)),
            ("rebuttals", &render_dialogue(&rebuttals)),
            ("ballots", &ballots),
            ("tally", &render_tally_lines(tally, &trace.scenario).join("\n")),
        ],
    );
    Ok(bundle(
        SUMMARISER_NAME,
        Phase::Summary,
        template("summary_system").trim_end().to_string(),
        user,
    ))
}
