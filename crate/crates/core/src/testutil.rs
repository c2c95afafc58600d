//! Small builders shared by unit tests.

use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};

use crate::backend::{FinishReason, Script, ScriptEntry};
use crate::config::{PersonaSpec, PolicyOption, ScenarioSpec};
use crate::prompt::{template_version, Phase, PromptBundle, SUMMARISER_NAME};
use crate::trace::{Ballot, BallotStatus, Utterance};

pub fn persona(name: &str) -> PersonaSpec {
    PersonaSpec {
        name: name.to_string(),
        principle: format!("{name} holds a principle."),
        approach: vec![format!("{name} weighs things carefully")],
        core_questions: vec![format!("What would {name} ask?")],
        decision_criteria: vec![format!("{name} decides on merit")],
        deliberation_style: None,
        forbidden_moves: Vec::new(),
        strengths: None,
        challenges: None,
        citations: None,
    }
}

pub fn options(k: u32) -> Vec<PolicyOption> {
    (1..=k)
        .map(|id| PolicyOption {
            id,
            label: format!("Choice {id}"),
            description: format!("Description of choice {id}."),
        })
        .collect()
}

pub fn scenario(k: u32) -> ScenarioSpec {
    ScenarioSpec {
        title: "Test Scenario".into(),
        narrative: "A hard case with several options.".into(),
        options: options(k),
    }
}

fn bundle(name: &str, phase: Phase) -> PromptBundle {
    PromptBundle {
        persona_name: name.to_string(),
        phase,
        messages: Vec::new(),
        template_version: template_version().to_string(),
    }
}

pub fn utterance(seq: u32, phase: Phase, name: &str, text: &str) -> Utterance {
    let t = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, seq).unwrap();
    Utterance {
        seq,
        phase,
        persona_name: name.to_string(),
        prompt: bundle(name, phase),
        response: text.to_string(),
        finish_reason: FinishReason::Stop,
        token_usage: None,
        started_at: t,
        ended_at: t,
    }
}

/// A ballot for `option`, or a no-tag abstention for `None`.
pub fn ballot(name: &str, option: Option<u32>) -> Ballot {
    let t = Utc.with_ymd_and_hms(2025, 1, 1, 0, 1, 0).unwrap();
    Ballot {
        persona_name: name.to_string(),
        prompt: bundle(name, Phase::Ballot),
        raw_response: option.map(|o| format!("<vote>{o}</vote>")).unwrap_or_default(),
        parsed_option: option,
        justification: String::new(),
        attempts: 1,
        status: if option.is_some() {
            BallotStatus::Valid
        } else {
            BallotStatus::AbstainedNoTag
        },
        rejected_attempts: Vec::new(),
        token_usage: None,
        started_at: t,
        ended_at: t,
    }
}

/// Opening and rebuttal text derived from each name, the given ballot
/// replies per persona, and a fixed summary.
pub fn script_for(panel: &[PersonaSpec], ballots: &[(&str, &[&str])]) -> Script {
    let entry = |text: &str| ScriptEntry {
        text: text.to_string(),
        prompt_sha256: None,
    };
    let mut entries = BTreeMap::new();
    for p in panel {
        entries.insert((p.name.clone(), Phase::Opening), vec![entry(&format!("Opening remarks by {}.", p.name))]);
        entries.insert((p.name.clone(), Phase::Rebuttal), vec![entry(&format!("Rebuttal remarks by {}.", p.name))]);
    }
    for (name, replies) in ballots {
        entries.insert((name.to_string(), Phase::Ballot), replies.iter().map(|r| entry(r)).collect());
    }
    entries.insert((SUMMARISER_NAME.to_string(), Phase::Summary), vec![entry("The panel met and voted.")]);
    Script::new(panel.iter().map(|p| p.name.clone()).collect(), entries).expect("valid test script")
}
