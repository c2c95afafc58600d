//! Vote tallies and cross-debate comparison reports.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{PolicyOption, ScenarioSpec};
use crate::trace::{Ballot, BallotStatus, DebateTrace};

pub const COMPARE_FORMAT_VERSION: &str = "adept-compare/1";

/// Majority means strictly more than half of the *valid* ballots. Ties leave
/// `majority_option` empty and list every top-scoring option in
/// `plurality_options`; no tie-breaker is applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tally {
    pub counts: BTreeMap<u32, u32>,
    pub valid_count: u32,
    pub abstentions: u32,
    pub majority_option: Option<u32>,
    pub plurality_options: Vec<u32>,
}

impl Tally {
    pub fn panel_size(&self) -> u32 {
        self.valid_count + self.abstentions
    }

    pub fn count(&self, option: u32) -> u32 {
        self.counts.get(&option).copied().unwrap_or(0)
    }

    /// `"4 (majority)"` or `"2"`.
    pub fn cell(&self, option: u32) -> String {
        let count = self.count(option);
        if self.majority_option == Some(option) {
            format!("{count} (majority)")
        } else {
            count.to_string()
        }
    }

    pub fn outcome(&self) -> String {
        if let Some(id) = self.majority_option {
            return format!("Option {id} wins by majority ({} of {} valid ballots)", self.count(id), self.valid_count);
        }
        match self.plurality_options.as_slice() {
            [] => "no majority (no valid ballots)".to_string(),
            [one] => format!("no majority; plurality Option {one}"),
            many => format!(
                "no majority; tie between Options {}",
                many.iter().map(u32::to_string).collect::<Vec<_>>().join(", ")
            ),
        }
    }
}

pub fn compute_tally(ballots: &[Ballot], options: &[PolicyOption]) -> Tally {
    let mut counts: BTreeMap<u32, u32> = options.iter().map(|o| (o.id, 0)).collect();
    let mut valid_count = 0;
    let mut abstentions = 0;
    for ballot in ballots {
        match (ballot.status, ballot.parsed_option) {
            (BallotStatus::Valid, Some(id)) if counts.contains_key(&id) => {
                *counts.get_mut(&id).unwrap() += 1;
                valid_count += 1;
            }
            _ => abstentions += 1,
        }
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let plurality_options = if top == 0 {
        Vec::new()
    } else {
        counts.iter().filter(|(_, c)| **c == top).map(|(id, _)| *id).collect()
    };
    let majority_option = counts.iter().find(|(_, c)| **c * 2 > valid_count).map(|(id, _)| *id);
    Tally {
        counts,
        valid_count,
        abstentions,
        majority_option,
        plurality_options,
    }
}

/// One line per option, then the abstention count and the outcome.
pub fn render_tally_lines(tally: &Tally, scenario: &ScenarioSpec) -> Vec<String> {
    let mut lines: Vec<String> = scenario
        .options
        .iter()
        .map(|o| format!("Option {}: {}  [{}]", o.id, tally.cell(o.id), o.label))
        .collect();
    lines.push(format!("Abstained: {}", tally.abstentions));
    lines.push(format!("Outcome: {}", tally.outcome()));
    lines
}

/// A persona's final position in one debate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteChoice {
    Option(u32),
    Abstain,
}

impl VoteChoice {
    pub fn of(ballot: &Ballot) -> Self {
        match (ballot.status, ballot.parsed_option) {
            (BallotStatus::Valid, Some(id)) => VoteChoice::Option(id),
            _ => VoteChoice::Abstain,
        }
    }
}

impl fmt::Display for VoteChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VoteChoice::Option(id) => write!(f, "Option {id}"),
            VoteChoice::Abstain => f.write_str("Abstained"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteShift {
    pub persona_name: String,
    pub from_option: VoteChoice,
    pub to_option: VoteChoice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableVote {
    pub persona_name: String,
    pub choice: VoteChoice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonReport {
    pub format_version: String,
    pub scenario_title: String,
    pub options: Vec<PolicyOption>,
    pub retained_personas: Vec<String>,
    pub added_personas: Vec<String>,
    pub removed_personas: Vec<String>,
    pub shifts: Vec<VoteShift>,
    pub stable: Vec<StableVote>,
    pub tally_a: Tally,
    pub tally_b: Tally,
    pub coalition_a: BTreeMap<u32, Vec<String>>,
    pub coalition_b: BTreeMap<u32, Vec<String>>,
    pub abstained_a: Vec<String>,
    pub abstained_b: Vec<String>,
}

impl ComparisonReport {
    /// e.g. `3 vote shifts among 4 retained personas`.
    pub fn shift_summary(&self) -> String {
        let shifts = self.shifts.len();
        let retained = self.retained_personas.len();
        format!(
            "{shifts} vote shift{} among {retained} retained persona{}",
            if shifts == 1 { "" } else { "s" },
            if retained == 1 { "" } else { "s" }
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompareError {
    #[error("the two traces use different option sets")]
    ScenarioMismatch,
    #[error("trace for `{0}` has no ballot for {1}")]
    MissingBallot(String, String),
}

fn choices(trace: &DebateTrace) -> Result<Vec<(String, VoteChoice)>, CompareError> {
    trace
        .personas
        .iter()
        .map(|p| {
            trace
                .ballot_of(&p.name)
                .map(|b| (p.name.clone(), VoteChoice::of(b)))
                .ok_or_else(|| CompareError::MissingBallot(trace.scenario.title.clone(), p.name.clone()))
        })
        .collect()
}

fn coalitions(
    options: &[PolicyOption],
    votes: &[(String, VoteChoice)],
) -> (BTreeMap<u32, Vec<String>>, Vec<String>) {
    let mut map: BTreeMap<u32, Vec<String>> = options.iter().map(|o| (o.id, Vec::new())).collect();
    let mut abstained = Vec::new();
    for (name, choice) in votes {
        match choice {
            VoteChoice::Option(id) => map.entry(*id).or_default().push(name.clone()),
            VoteChoice::Abstain => abstained.push(name.clone()),
        }
    }
    for names in map.values_mut() {
        names.sort();
    }
    abstained.sort();
    (map, abstained)
}

/// Personas are matched across traces by exact name.
pub fn compare(a: &DebateTrace, b: &DebateTrace) -> Result<ComparisonReport, CompareError> {
    if a.scenario.options != b.scenario.options {
        return Err(CompareError::ScenarioMismatch);
    }
    let votes_a = choices(a)?;
    let votes_b = choices(b)?;
    let names_a: HashSet<&str> = votes_a.iter().map(|(n, _)| n.as_str()).collect();
    let names_b: HashSet<&str> = votes_b.iter().map(|(n, _)| n.as_str()).collect();

    let mut retained = Vec::new();
    let mut removed = Vec::new();
    let mut shifts = Vec::new();
    let mut stable = Vec::new();
    for (name, from) in &votes_a {
        match votes_b.iter().find(|(n, _)| n == name) {
            Some((_, to)) => {
                retained.push(name.clone());
                if from == to {
                    stable.push(StableVote {
                        persona_name: name.clone(),
                        choice: *from,
                    });
                } else {
                    shifts.push(VoteShift {
                        persona_name: name.clone(),
                        from_option: *from,
                        to_option: *to,
                    });
                }
            }
            None => removed.push(name.clone()),
        }
    }
    let added = votes_b
        .iter()
        .filter(|(n, _)| !names_a.contains(n.as_str()))
        .map(|(n, _)| n.clone())
        .collect();
    debug_assert!(retained.iter().all(|n| names_b.contains(n.as_str())));

    let (coalition_a, abstained_a) = coalitions(&a.scenario.options, &votes_a);
    let (coalition_b, abstained_b) = coalitions(&b.scenario.options, &votes_b);
    let ballots_tally = |t: &DebateTrace| compute_tally(&t.ballots, &t.scenario.options);
    Ok(ComparisonReport {
        format_version: COMPARE_FORMAT_VERSION.to_string(),
        scenario_title: a.scenario.title.clone(),
        options: a.scenario.options.clone(),
        retained_personas: retained,
        added_personas: added,
        removed_personas: removed,
        shifts,
        stable,
        tally_a: ballots_tally(a),
        tally_b: ballots_tally(b),
        coalition_a,
        coalition_b,
        abstained_a,
        abstained_b,
    })
}

fn name_list(names: &[String]) -> String {
    if names.is_empty() {
        "(none)".to_string()
    } else {
        names.join(", ")
    }
}

pub fn render_comparison(report: &ComparisonReport) -> String {
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("PANEL COMPARISON: {}", report.scenario_title));
    line(String::new());
    line("TALLY".into());
    line("Option | Debate A | Debate B".into());
    for o in &report.options {
        line(format!("Option {} | {} | {}", o.id, report.tally_a.cell(o.id), report.tally_b.cell(o.id)));
    }
    if report.tally_a.abstentions > 0 || report.tally_b.abstentions > 0 {
        line(format!("Abstained | {} | {}", report.tally_a.abstentions, report.tally_b.abstentions));
    }
    line(format!("Outcome A: {}", report.tally_a.outcome()));
    line(format!("Outcome B: {}", report.tally_b.outcome()));
    line(String::new());

    line("MEMBERSHIP".into());
    line(format!("Retained ({}): {}", report.retained_personas.len(), name_list(&report.retained_personas)));
    line(format!("Removed ({}): {}", report.removed_personas.len(), name_list(&report.removed_personas)));
    line(format!("Added ({}): {}", report.added_personas.len(), name_list(&report.added_personas)));
    line(String::new());

    line("VOTE SHIFTS".into());
    if report.shifts.is_empty() {
        line("No vote shifts among retained personas.".into());
    } else {
        for s in &report.shifts {
            line(format!("- {}: {} -> {}", s.persona_name, s.from_option, s.to_option));
        }
    }
    line(report.shift_summary());
    line(String::new());

    line("STABLE VOTES".into());
    if report.stable.is_empty() {
        line("(none)".into());
    }
    for s in &report.stable {
        line(format!("- {}: {}", s.persona_name, s.choice));
    }
    line(String::new());

    for (label, coalition, abstained) in [
        ("A", &report.coalition_a, &report.abstained_a),
        ("B", &report.coalition_b, &report.abstained_b),
    ] {
        line(format!("COALITIONS (Debate {label})"));
        for (id, names) in coalition {
            line(format!("Option {id}: {}", name_list(names)));
        }
        if !abstained.is_empty() {
            line(format!("Abstained: {}", name_list(abstained)));
        }
        line(String::new());
    }
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}
