use std::collections::BTreeMap;

use adept_core::analysis::{compare, compute_tally};
use adept_core::batch::synthetic_case;
use adept_core::config::{ModelConfig, PolicyOption};
use adept_core::engine::{parse_vote, VoteError};
use adept_core::persistence::{canonical_hash, parse_trace, render_report, serialize_trace};
use adept_core::prompt::{Phase, PromptBundle};
use adept_core::trace::{Ballot, BallotStatus};
use chrono::Utc;
use proptest::prelude::*;

fn options(k: u32) -> Vec<PolicyOption> {
    (1..=k)
        .map(|id| PolicyOption {
            id,
            label: format!("O{id}"),
            description: String::new(),
        })
        .collect()
}

fn ballot(i: usize, vote: Option<u32>) -> Ballot {
    let now = Utc::now();
    Ballot {
        persona_name: format!("P{i}"),
        prompt: PromptBundle {
            persona_name: format!("P{i}"),
            phase: Phase::Ballot,
            messages: vec![],
            template_version: String::new(),
        },
        raw_response: String::new(),
        parsed_option: vote,
        justification: String::new(),
        attempts: 1,
        status: if vote.is_some() {
            BallotStatus::Valid
        } else {
            BallotStatus::AbstainedNoTag
        },
        rejected_attempts: vec![],
        token_usage: None,
        started_at: now,
        ended_at: now,
    }
}

fn votes_strategy() -> impl Strategy<Value = (u32, Vec<Option<u32>>)> {
    (2u32..=6).prop_flat_map(|k| (Just(k), prop::collection::vec(prop::option::weighted(0.85, 1..=k), 0..12)))
}

fn tag_strategy() -> impl Strategy<Value = (String, String)> {
    let ws = "[ \t\n\r]{0,3}";
    ("(?i:vote)", ws, ws, "(?i:vote)")
        .prop_map(|(open, a, b, close)| (format!("<{open}>{a}"), format!("{b}</{close}>")))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn tally_matches_recount((k, votes) in votes_strategy()) {
        let ballots: Vec<Ballot> = votes.iter().enumerate().map(|(i, v)| ballot(i, *v)).collect();
        let t = compute_tally(&ballots, &options(k));
        let mut recount: BTreeMap<u32, u32> = (1..=k).map(|id| (id, 0)).collect();
        for id in votes.iter().flatten() {
            *recount.get_mut(id).unwrap() += 1;
        }
        let valid: u32 = recount.values().sum();
        prop_assert_eq!(&t.counts, &recount);
        prop_assert_eq!(t.valid_count, valid);
        prop_assert_eq!(t.abstentions as usize, votes.len() - valid as usize);
        let top = recount.values().copied().max().unwrap_or(0);
        let leaders: Vec<u32> = recount.iter().filter(|(_, c)| top > 0 && **c == top).map(|(id, _)| *id).collect();
        prop_assert_eq!(&t.plurality_options, &leaders);
        let majority = leaders.iter().copied().find(|id| 2 * recount[id] > valid);
        prop_assert_eq!(t.majority_option, majority);
    }

    #[test]
    fn well_formed_tag_parses(k in 2u32..=6, pick in 1u32..=6, (open, close) in tag_strategy(),
                              before in "[a-zA-Z ,.]{0,40}", after in "[a-zA-Z ,.]{0,40}") {
        let text = format!("{before}{open}{pick}{close}{after}");
        let result = parse_vote(&text, &options(k));
        if pick <= k {
            prop_assert_eq!(result.unwrap().option, pick);
        } else {
            let is_invalid = matches!(result, Err(VoteError::InvalidOption { .. }));
            prop_assert!(is_invalid);
        }
    }

    #[test]
    fn prose_without_tags_has_no_vote(text in "[a-zA-Z0-9 ,.<>/]{0,80}") {
        prop_assume!(!text.to_ascii_lowercase().contains("<vote>"));
        prop_assert_eq!(parse_vote(&text, &options(4)), Err(VoteError::NoVoteFound));
    }

    #[test]
    fn first_tag_wins(a in 1u32..=4, b in 1u32..=4, gap in "[a-z ]{0,20}") {
        let v = parse_vote(&format!("<vote>{a}</vote>{gap}<vote>{b}</vote>"), &options(4)).unwrap();
        prop_assert_eq!(v.option, a);
        prop_assert_eq!(v.tag_count, 2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn synthetic_debates_hold_invariants(seed in any::<u64>()) {
        let case = synthetic_case(seed);
        let config = ModelConfig::scripted("synthetic");
        let trace = case.run(&config).unwrap();
        prop_assert!(trace.violations().is_empty(), "{:?}", trace.violations());
        let counted: Vec<_> = trace.ballots.iter().map(|b| b.parsed_option).collect();
        prop_assert_eq!(&counted, &case.expected);

        let again = case.run(&config).unwrap();
        prop_assert_eq!(canonical_hash(&trace), canonical_hash(&again));

        let mut par_config = config.clone();
        par_config.parallel_independent_calls = true;
        let mut par = case.run(&par_config).unwrap();
        par.model_config.parallel_independent_calls = false;
        prop_assert_eq!(canonical_hash(&trace), canonical_hash(&par));

        let back = parse_trace(&serialize_trace(&trace)).unwrap();
        prop_assert_eq!(&back, &trace);
        prop_assert_eq!(render_report(&back).unwrap(), render_report(&again).unwrap());
    }

    #[test]
    fn comparison_is_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
        let config = ModelConfig::scripted("synthetic");
        let mut a = synthetic_case(s1).run(&config).unwrap();
        let b = synthetic_case(s2).run(&config).unwrap();
        // same option set so the two are comparable
        a.scenario.options = b.scenario.options.clone();
        for ballot in &mut a.ballots {
            if ballot.parsed_option.is_some_and(|o| b.scenario.option(o).is_none()) {
                ballot.parsed_option = None;
                ballot.status = BallotStatus::AbstainedInvalidOption;
            }
        }
        let ab = compare(&a, &b).unwrap();
        let ba = compare(&b, &a).unwrap();
        prop_assert_eq!(ab.shifts.len(), ba.shifts.len());
        prop_assert_eq!(&ab.added_personas, &ba.removed_personas);
        prop_assert_eq!(&ab.tally_a, &ba.tally_b);
        let self_cmp = compare(&a, &a).unwrap();
        prop_assert!(self_cmp.shifts.is_empty());
        prop_assert_eq!(self_cmp.retained_personas.len(), a.personas.len());
    }
}
