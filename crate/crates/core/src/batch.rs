//! Seeded synthetic debates for load tests and benchmarks.
//!
//! Each case draws a panel, an option list and a ballot behaviour per persona
//! (clean vote, vote after a correction, abstention, duplicate tags, ...)
//! and records the option the protocol must end up counting.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::backend::{Script, ScriptEntry, ScriptedBackend};
use crate::config::{ModelConfig, PersonaSpec, PolicyOption, ScenarioSpec};
use crate::engine::{run_debate, RunError};
use crate::par::map_ordered;
use crate::prompt::{Phase, SUMMARISER_NAME};
use crate::trace::DebateTrace;

#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub seed: u64,
    pub scenario: ScenarioSpec,
    pub personas: Vec<PersonaSpec>,
    pub script: Script,
    /// Counted option per persona, `None` for an abstention.
    pub expected: Vec<Option<u32>>,
}

fn persona(i: usize) -> PersonaSpec {
    let name = format!("Persona {i}");
    PersonaSpec {
        principle: format!("{name} follows principle {i}."),
        approach: vec![format!("approach {i}a"), format!("approach {i}b")],
        core_questions: vec![format!("question {i}?")],
        decision_criteria: vec![format!("criterion {i}")],
        deliberation_style: None,
        forbidden_moves: Vec::new(),
        strengths: None,
        challenges: None,
        citations: None,
        name,
    }
}

fn scenario(k: u32, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        title: format!("Synthetic case {seed}"),
        narrative: format!("A generated dilemma with {k} options."),
        options: (1..=k)
            .map(|id| PolicyOption {
                id,
                label: format!("Policy {id}"),
                description: format!("Generated policy number {id}."),
            })
            .collect(),
    }
}

/// Ballot replies for one persona and the option that must be counted.
fn ballot_replies(rng: &mut StdRng, who: &str, k: u32) -> (Vec<String>, Option<u32>) {
    let pick = rng.gen_range(1..=k);
    let bad = k + rng.gen_range(1..=5);
    let tag = |id: u32, rng: &mut StdRng| match rng.gen_range(0..3) {
        0 => format!("<vote>{id}</vote>"),
        1 => format!("<VOTE> {id}\n</Vote>"),
        _ => format!("<vote>\t{id} </vote>"),
    };
    let clean = format!("{who} votes {} because it holds up.", tag(pick, rng));
    match rng.gen_range(0..7) {
        0 | 1 => (vec![clean], Some(pick)),
        2 => (vec![format!("{who} forgot the element."), clean], Some(pick)),
        3 => (vec![format!("{who} picks {}.", tag(bad, rng)), clean], Some(pick)),
        4 => (
            vec![format!("{who} cannot decide."), format!("{who} still cannot decide.")],
            None,
        ),
        5 => (vec![format!("{who}: {} {}", tag(bad, rng), tag(bad + 1, rng)); 2], None),
        _ => {
            let other = rng.gen_range(1..=k);
            (vec![format!("{who}: {} then {}", tag(pick, rng), tag(other, rng))], Some(pick))
        }
    }
}

pub fn synthetic_case(seed: u64) -> SyntheticCase {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = rng.gen_range(2..=8);
    let k = rng.gen_range(2..=6);
    let personas: Vec<PersonaSpec> = (0..n).map(persona).collect();
    let entry = |text: String| ScriptEntry {
        text,
        prompt_sha256: None,
    };
    let mut entries = BTreeMap::new();
    let mut expected = Vec::with_capacity(n);
    for p in &personas {
        entries.insert((p.name.clone(), Phase::Opening), vec![entry(format!("{} opens.", p.name))]);
        entries.insert((p.name.clone(), Phase::Rebuttal), vec![entry(format!("{} responds.", p.name))]);
        let (replies, counted) = ballot_replies(&mut rng, &p.name, k);
        entries.insert((p.name.clone(), Phase::Ballot), replies.into_iter().map(entry).collect());
        expected.push(counted);
    }
    entries.insert(
        (SUMMARISER_NAME.to_string(), Phase::Summary),
        vec![entry(format!("Summary of case {seed}."))],
    );
    let script = Script::new(personas.iter().map(|p| p.name.clone()).collect(), entries).expect("generated script is valid");
    SyntheticCase {
        seed,
        scenario: scenario(k, seed),
        personas,
        script,
        expected,
    }
}

impl SyntheticCase {
    pub fn run(&self, config: &ModelConfig) -> Result<DebateTrace, RunError> {
        run_debate(&self.scenario, &self.personas, config, &ScriptedBackend::new(self.script.clone()))
    }
}

/// Runs every case, spreading cases over the pool when `parallel` is set.
pub fn run_batch(cases: &[SyntheticCase], config: &ModelConfig, parallel: bool) -> Vec<Result<DebateTrace, RunError>> {
    map_ordered(parallel, cases, |case| case.run(config))
}
