//! Deterministic backend serving recorded responses.
//!
//! Responses are keyed by `(persona, phase)` and served in recorded order, so
//! the n-th request for a key receives the n-th entry. Keying by speaker rather
//! than by prompt digest lets templates evolve without invalidating fixtures;
//! strict mode additionally checks recorded prompt digests.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Backend, BackendError, BackendErrorKind, CallContext, CompletionRequest, CompletionResult, FinishReason};
use crate::persistence;
use crate::prompt::{ChatMessage, Phase, SUMMARISER_NAME};
use crate::trace::DebateTrace;

pub const SCRIPT_FORMAT: &str = "adept-script/1";

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unsupported script format `{0}` (expected {SCRIPT_FORMAT})")]
    UnsupportedFormat(String),
    #[error("script has no {phase} response for {persona}")]
    MissingKey { persona: String, phase: Phase },
    #[error("script entry for {0}, who is not on the panel")]
    UnknownPersona(String),
    #[error("panel lists {0} more than once")]
    DuplicatePanelMember(String),
    #[error("summary entries must use the summary phase, not {0}")]
    MisplacedSummary(Phase),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileEntry {
    persona: String,
    phase: Phase,
    text: String,
    #[serde(default)]
    prompt_sha256: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    format: String,
    panel: Vec<String>,
    entries: Vec<FileEntry>,
    summary: String,
    #[serde(default)]
    summary_prompt_sha256: Option<String>,
}

/// Digest of a message list as sent, used for strict replay.
pub fn prompt_digest(messages: &[ChatMessage]) -> String {
    let canonical = serde_json::to_string(messages).expect("messages serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

type Key = (String, Phase);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Script {
    panel: Vec<String>,
    entries: BTreeMap<Key, Vec<ScriptEntry>>,
}

impl Script {
    /// Builds a script and checks that every panel member has at least one
    /// response for each of opening, rebuttal and ballot, plus a summary.
    pub fn new(panel: Vec<String>, entries: BTreeMap<Key, Vec<ScriptEntry>>) -> Result<Self, ScriptError> {
        let mut seen = HashSet::new();
        for name in &panel {
            if !seen.insert(name.as_str()) {
                return Err(ScriptError::DuplicatePanelMember(name.clone()));
            }
        }
        for (persona, phase) in entries.keys() {
            if persona == SUMMARISER_NAME && !seen.contains(persona.as_str()) {
                if *phase != Phase::Summary {
                    return Err(ScriptError::MisplacedSummary(*phase));
                }
            } else if !seen.contains(persona.as_str()) {
                return Err(ScriptError::UnknownPersona(persona.clone()));
            }
        }
        let has = |persona: &str, phase: Phase| {
            entries
                .get(&(persona.to_string(), phase))
                .is_some_and(|v| !v.is_empty())
        };
        for name in &panel {
            for phase in [Phase::Opening, Phase::Rebuttal, Phase::Ballot] {
                if !has(name, phase) {
                    return Err(ScriptError::MissingKey {
                        persona: name.clone(),
                        phase,
                    });
                }
            }
        }
        if !has(SUMMARISER_NAME, Phase::Summary) {
            return Err(ScriptError::MissingKey {
                persona: SUMMARISER_NAME.to_string(),
                phase: Phase::Summary,
            });
        }
        Ok(Script { panel, entries })
    }

    pub fn parse_fixture(text: &str, path: &Path) -> Result<Self, ScriptError> {
        let file: ScriptFile = serde_yaml::from_str(text).map_err(|e| ScriptError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if file.format != SCRIPT_FORMAT {
            return Err(ScriptError::UnsupportedFormat(file.format));
        }
        let mut entries: BTreeMap<Key, Vec<ScriptEntry>> = BTreeMap::new();
        for e in file.entries {
            entries.entry((e.persona, e.phase)).or_default().push(ScriptEntry {
                text: e.text,
                prompt_sha256: e.prompt_sha256,
            });
        }
        entries
            .entry((SUMMARISER_NAME.to_string(), Phase::Summary))
            .or_default()
            .push(ScriptEntry {
                text: file.summary,
                prompt_sha256: file.summary_prompt_sha256,
            });
        Script::new(file.panel, entries)
    }

    /// Every exchange of a recorded debate, in the order it was made, with
    /// prompt digests filled in.
    pub fn from_trace(trace: &DebateTrace) -> Result<Self, ScriptError> {
        let mut entries: BTreeMap<Key, Vec<ScriptEntry>> = BTreeMap::new();
        let mut push = |persona: &str, phase: Phase, text: &str, messages: &[ChatMessage]| {
            entries.entry((persona.to_string(), phase)).or_default().push(ScriptEntry {
                text: text.to_string(),
                prompt_sha256: Some(prompt_digest(messages)),
            });
        };
        for u in &trace.utterances {
            push(&u.persona_name, u.phase, &u.response, &u.prompt.messages);
        }
        for b in &trace.ballots {
            for r in &b.rejected_attempts {
                push(&b.persona_name, Phase::Ballot, &r.response, &r.prompt.messages);
            }
            push(&b.persona_name, Phase::Ballot, &b.raw_response, &b.prompt.messages);
        }
        if let Some(s) = &trace.summary {
            push(SUMMARISER_NAME, Phase::Summary, &s.text, &s.prompt.messages);
        }
        Script::new(trace.personas.iter().map(|p| p.name.clone()).collect(), entries)
    }

    /// Loads either a fixture file or a persisted trace (detected by its
    /// `format_version` header).
    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let text = fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let looks_like_trace = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .is_some_and(|v| v.get("format_version").is_some());
        if looks_like_trace {
            let trace = persistence::parse_trace(&text).map_err(|e| ScriptError::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            Script::from_trace(&trace)
        } else {
            Script::parse_fixture(&text, path)
        }
    }

    pub fn panel(&self) -> &[String] {
        &self.panel
    }

    /// Number of persona responses, not counting the summary.
    pub fn len(&self) -> usize {
        self.entries
            .iter()
            .filter(|((_, phase), _)| *phase != Phase::Summary)
            .map(|(_, v)| v.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn responses(&self, persona: &str, phase: Phase) -> &[ScriptEntry] {
        self.entries
            .get(&(persona.to_string(), phase))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

#[derive(Debug)]
pub struct ScriptedBackend {
    script: Script,
    cursors: Mutex<HashMap<Key, usize>>,
    strict: bool,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        ScriptedBackend {
            script,
            cursors: Mutex::new(HashMap::new()),
            strict: false,
        }
    }

    /// Also require each prompt to match its recorded digest, where one is recorded.
    pub fn strict(mut self) -> Self {
        self.strict = true;
        self
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    /// Total responses served so far.
    pub fn served(&self) -> usize {
        self.cursors.lock().unwrap().values().sum()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, ctx: &CallContext, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        request.validate()?;
        let key = (ctx.persona_name.clone(), ctx.phase);
        let entry = {
            let mut cursors = self.cursors.lock().unwrap();
            let cursor = cursors.entry(key.clone()).or_insert(0);
            let entry = self.script.entries.get(&key).and_then(|v| v.get(*cursor)).ok_or_else(|| {
                BackendError::new(
                    BackendErrorKind::ScriptExhausted,
                    format!("no {} response #{} for {}", ctx.phase, *cursor + 1, ctx.persona_name),
                )
            })?;
            *cursor += 1;
            entry
        };
        if self.strict {
            if let Some(expected) = &entry.prompt_sha256 {
                let actual = prompt_digest(&request.messages);
                if &actual != expected {
                    return Err(BackendError::new(
                        BackendErrorKind::ScriptMismatch,
                        format!(
                            "{} prompt for {} differs from the recording ({actual} != {expected})",
                            ctx.phase, ctx.persona_name
                        ),
                    ));
                }
            }
        }
        Ok(CompletionResult {
            text: entry.text.clone(),
            finish_reason: FinishReason::Stop,
            token_usage: None,
        })
    }
}
