//! Trace files, canonical hashing and plain-text reports.
//!
//! A trace file is pretty-printed JSON with sorted keys:
//!
//! ```text
//! { "canonical_hash": "...", "created_at": "...", "format_version": "adept-trace/1", "trace": { ... } }
//! ```
//!
//! The canonical hash covers the trace with every wall-clock timestamp and
//! token count masked, so a replay of the same exchanges hashes identically.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{render_comparison, render_tally_lines, ComparisonReport};
use crate::prompt::{attribution, Phase, PromptError};
use crate::trace::{BallotStatus, DebateTrace, RunStatus, TRACE_FORMAT_VERSION};

pub const REPORT_WIDTH: usize = 100;

const TIME_KEYS: [&str; 3] = ["started_at", "ended_at", "created_at"];
const TIME_SENTINEL: &str = "<time>";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt trace: {0}")]
    Parse(String),
    #[error("unsupported trace format `{0}` (expected {TRACE_FORMAT_VERSION})")]
    UnsupportedVersion(String),
    #[error("canonical hash mismatch: file records {recorded}, content hashes to {computed}")]
    HashMismatch { recorded: String, computed: String },
    #[error("trace violates protocol invariants: {}", .0.join("; "))]
    InvalidTrace(Vec<String>),
    #[error(transparent)]
    Incomplete(#[from] PromptError),
}

impl PersistError {
    fn io(path: &Path, source: io::Error) -> Self {
        PersistError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceFile {
    format_version: String,
    created_at: DateTime<Utc>,
    canonical_hash: String,
    trace: DebateTrace,
}

fn mask(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for (key, v) in map.iter_mut() {
                if TIME_KEYS.contains(&key.as_str()) {
                    *v = Value::String(TIME_SENTINEL.into());
                } else if key == "token_usage" {
                    *v = Value::Null;
                } else {
                    mask(v);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(mask),
        _ => {}
    }
}

/// The trace as a JSON value with volatile fields masked. Object keys are
/// sorted because `serde_json::Map` is ordered.
pub fn canonical_value(trace: &DebateTrace) -> Value {
    let mut value = serde_json::to_value(trace).expect("trace serializes");
    mask(&mut value);
    value
}

/// Hex sha256 of the compact canonical serialization.
pub fn canonical_hash(trace: &DebateTrace) -> String {
    let bytes = serde_json::to_vec(&canonical_value(trace)).expect("value serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Lowercase ASCII slug of a scenario title, at most 48 characters.
pub fn slug(title: &str) -> String {
    let mut out = String::new();
    for c in title.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    let mut out: String = out.trim_matches('_').chars().take(48).collect();
    while out.ends_with('_') {
        out.pop();
    }
    if out.is_empty() {
        "debate".into()
    } else {
        out
    }
}

/// Creates `dir/stem.ext`, or `stem-1.ext`, `stem-2.ext`, ... if taken.
/// Existing files are never overwritten.
fn create_unique(dir: &Path, stem: &str, ext: &str) -> Result<(PathBuf, File), PersistError> {
    fs::create_dir_all(dir).map_err(|e| PersistError::io(dir, e))?;
    for n in 0u32.. {
        let name = if n == 0 {
            format!("{stem}.{ext}")
        } else {
            format!("{stem}-{n}.{ext}")
        };
        let path = dir.join(name);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(file) => return Ok((path, file)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(PersistError::io(&path, e)),
        }
    }
    unreachable!()
}

fn write_new(dir: &Path, stem: &str, ext: &str, contents: &[u8]) -> Result<PathBuf, PersistError> {
    let (path, mut file) = create_unique(dir, stem, ext)?;
    file.write_all(contents)
        .and_then(|_| file.sync_all())
        .map_err(|e| PersistError::io(&path, e))?;
    Ok(path)
}

pub fn file_stem(trace: &DebateTrace) -> String {
    format!("{}_{}", slug(&trace.scenario.title), trace.created_at.format("%Y%m%dT%H%M%SZ"))
}

pub fn serialize_trace(trace: &DebateTrace) -> String {
    let file = TraceFile {
        format_version: trace.format_version.clone(),
        created_at: trace.created_at,
        canonical_hash: canonical_hash(trace),
        trace: trace.clone(),
    };
    // round-trip through Value so every object's keys come out sorted
    let value = serde_json::to_value(&file).expect("trace serializes");
    let mut text = serde_json::to_string_pretty(&value).expect("value serializes");
    text.push('\n');
    text
}

/// Writes `<slug>_<timestamp>.trace.json` under `out_dir` and returns its path.
pub fn persist_trace(trace: &DebateTrace, out_dir: &Path) -> Result<PathBuf, PersistError> {
    write_new(out_dir, &file_stem(trace), "trace.json", serialize_trace(trace).as_bytes())
}

/// Writes the plain-text report next to the trace. Aborted traces get no report.
pub fn persist_report(trace: &DebateTrace, out_dir: &Path) -> Result<PathBuf, PersistError> {
    let report = render_report(trace)?;
    write_new(out_dir, &file_stem(trace), "report.txt", report.as_bytes())
}

/// Parses and verifies a trace file: format version, canonical hash and,
/// for complete runs, every protocol invariant.
pub fn parse_trace(text: &str) -> Result<DebateTrace, PersistError> {
    let value: Value = serde_json::from_str(text).map_err(|e| PersistError::Parse(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(Value::as_str)
        .ok_or_else(|| PersistError::Parse("missing format_version".into()))?;
    if version != TRACE_FORMAT_VERSION {
        return Err(PersistError::UnsupportedVersion(version.to_string()));
    }
    let file: TraceFile = serde_json::from_value(value).map_err(|e| PersistError::Parse(e.to_string()))?;
    if file.trace.format_version != TRACE_FORMAT_VERSION {
        return Err(PersistError::UnsupportedVersion(file.trace.format_version));
    }
    let computed = canonical_hash(&file.trace);
    if computed != file.canonical_hash {
        return Err(PersistError::HashMismatch {
            recorded: file.canonical_hash,
            computed,
        });
    }
    if file.trace.status == RunStatus::Complete {
        let violations = file.trace.violations();
        if !violations.is_empty() {
            return Err(PersistError::InvalidTrace(violations));
        }
    }
    Ok(file.trace)
}

pub fn load_trace(path: &Path) -> Result<DebateTrace, PersistError> {
    let text = fs::read_to_string(path).map_err(|e| PersistError::io(path, e))?;
    parse_trace(&text)
}

/// Writes the comparison as text at `text_path` and as JSON next to it with
/// a `.json` extension. Both files are pure functions of the inputs, so
/// rewriting them is harmless.
pub fn write_comparison(report: &ComparisonReport, text_path: &Path) -> Result<(PathBuf, PathBuf), PersistError> {
    let json_path = text_path.with_extension("json");
    if json_path == text_path {
        return Err(PersistError::io(
            text_path,
            io::Error::new(io::ErrorKind::InvalidInput, "text output path must not end in .json"),
        ));
    }
    if let Some(dir) = text_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| PersistError::io(dir, e))?;
    }
    fs::write(text_path, render_comparison(report)).map_err(|e| PersistError::io(text_path, e))?;
    let value = serde_json::to_value(report).expect("report serializes");
    let mut json = serde_json::to_string_pretty(&value).expect("value serializes");
    json.push('\n');
    fs::write(&json_path, json).map_err(|e| PersistError::io(&json_path, e))?;
    Ok((text_path.to_path_buf(), json_path))
}

fn wrap_into(out: &mut String, text: &str) {
    for line in textwrap::wrap(text.trim(), REPORT_WIDTH) {
        out.push_str(&line);
        out.push('\n');
    }
}

fn section(out: &mut String, title: &str) {
    out.push('\n');
    out.push_str(title);
    out.push('\n');
    out.push_str(&"=".repeat(title.len()));
    out.push('\n');
}

/// Human-readable report of a complete trace. Contains no timestamps, so
/// a replayed trace renders byte-identically.
pub fn render_report(trace: &DebateTrace) -> Result<String, PromptError> {
    if !trace.is_complete() {
        return Err(PromptError::IncompleteTrace(match &trace.abort_reason {
            Some(r) => format!("run aborted: {r}"),
            None => "tally or summary missing".into(),
        }));
    }
    let tally = trace.tally.as_ref().expect("complete trace has a tally");
    let summary = trace.summary_text().expect("complete trace has a summary");
    let mut out = String::new();
    out.push_str(&trace.scenario.title);
    out.push('\n');
    out.push_str(&format!("Model: {}\n", trace.model_config.model_id));
    out.push_str(&format!("Templates: {}\n", trace.template_version));
    out.push_str(&format!(
        "Panel: {}\n",
        trace.personas.iter().map(|p| p.name.as_str()).collect::<Vec<_>>().join(", ")
    ));

    for (title, phase) in [("OPENING STATEMENTS", Phase::Opening), ("REBUTTALS", Phase::Rebuttal)] {
        section(&mut out, title);
        for u in trace.utterances_in(phase) {
            out.push('\n');
            out.push_str(&attribution(&u.persona_name, phase));
            out.push('\n');
            wrap_into(&mut out, &u.response);
        }
    }

    section(&mut out, "BALLOTS");
    for b in &trace.ballots {
        let vote = match (b.status, b.parsed_option) {
            (BallotStatus::Valid, Some(id)) => {
                let label = trace.scenario.option(id).map(|o| o.label.as_str()).unwrap_or("?");
                format!("Option {id} ({label})")
            }
            _ => b.status.describe().to_string(),
        };
        out.push('\n');
        out.push_str(&format!("{}: {vote}\n", b.persona_name));
        if !b.justification.is_empty() {
            wrap_into(&mut out, &b.justification);
        }
    }

    section(&mut out, "TALLY");
    for line in render_tally_lines(tally, &trace.scenario) {
        out.push_str(&line);
        out.push('\n');
    }

    if !trace.warnings.is_empty() {
        section(&mut out, "WARNINGS");
        for w in &trace.warnings {
            out.push_str(&format!("- {w}\n"));
        }
    }

    section(&mut out, "EXECUTIVE SUMMARY");
    for para in summary.split("\n\n") {
        out.push('\n');
        wrap_into(&mut out, para);
    }
    Ok(out)
}
