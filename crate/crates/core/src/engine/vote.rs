//! Vote-tag parsing.
//!
//! Grammar: case-insensitive `<vote>`, optional ASCII whitespace, a decimal
//! integer, optional ASCII whitespace, case-insensitive `</vote>`. The first
//! well-formed tag in the text decides the vote, even when later tags exist.

use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::config::PolicyOption;

fn tag_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)<vote>[\t\n\x0C\r ]*([0-9]+)[\t\n\x0C\r ]*</vote>").expect("valid regex"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedVote {
    pub option: u32,
    /// Byte range of the winning tag within the input.
    pub span: Range<usize>,
    /// Number of well-formed tags found in the text.
    pub tag_count: usize,
}

impl ParsedVote {
    pub fn duplicate_warning(&self, persona_name: &str) -> Option<String> {
        (self.tag_count > 1).then(|| {
            format!(
                "ballot of {persona_name} contains {} vote tags; the first (option {}) was counted",
                self.tag_count, self.option
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VoteError {
    #[error("no well-formed vote tag found")]
    NoVoteFound,
    #[error("vote `{raw}` is not one of the listed options")]
    InvalidOption { raw: String, span: Range<usize>, tag_count: usize },
}

pub fn parse_vote(text: &str, options: &[PolicyOption]) -> Result<ParsedVote, VoteError> {
    let mut matches = tag_pattern().captures_iter(text);
    let first = matches.next().ok_or(VoteError::NoVoteFound)?;
    let tag_count = 1 + matches.count();
    let whole = first.get(0).expect("group 0");
    let digits = first.get(1).expect("group 1").as_str();
    let span = whole.range();
    match digits.parse::<u32>() {
        Ok(id) if options.iter().any(|o| o.id == id) => Ok(ParsedVote {
            option: id,
            span,
            tag_count,
        }),
        _ => Err(VoteError::InvalidOption {
            raw: digits.to_string(),
            span,
            tag_count,
        }),
    }
}

/// Ballot text with the deciding tag cut out and the whitespace around the
/// cut collapsed; if there is no well-formed tag the text is only trimmed.
pub fn justification(text: &str) -> String {
    match tag_pattern().find(text) {
        None => text.trim().to_string(),
        Some(m) => {
            let before = text[..m.start()].trim();
            let after = text[m.end()..].trim();
            match (before.is_empty(), after.is_empty()) {
                (true, _) => after.to_string(),
                (_, true) => before.to_string(),
                _ => format!("{before} {after}"),
            }
        }
    }
}
