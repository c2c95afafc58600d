//! Loading and validation of the three debate inputs: the scenario with its
//! fixed policy options, a directory of persona definitions, and the model
//! configuration.
//!
//! All documents are YAML. Unknown keys are rejected so that a misspelled
//! field fails loudly instead of silently taking a default.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 4096;
pub const DEFAULT_REQUEST_TIMEOUT_SECS: u64 = 120;
pub const DEFAULT_MAX_RETRIES: u32 = 3;
pub const MAX_RETRIES_LIMIT: u32 = 10;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: file not found")]
    FileMissing { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{}: parse error: {message}", line.map(|l| l.to_string()).unwrap_or_else(|| "?".into()))]
    Parse {
        path: PathBuf,
        line: Option<usize>,
        column: Option<usize>,
        message: String,
    },
    #[error("{path}: field `{field}`: {message}")]
    Validation {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("{path}: no persona definitions found")]
    EmptyPanel { path: PathBuf },
}

impl ConfigError {
    fn validation(path: &Path, field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Validation {
            path: path.to_path_buf(),
            field: field.into(),
            message: message.into(),
        }
    }

    fn parse(path: &Path, err: serde_yaml::Error) -> Self {
        let loc = err.location();
        ConfigError::Parse {
            path: path.to_path_buf(),
            line: loc.as_ref().map(|l| l.line()),
            column: loc.as_ref().map(|l| l.column()),
            message: err.to_string(),
        }
    }
}

/// One of the fixed, enumerated choices a panel votes on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyOption {
    pub id: u32,
    pub label: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub title: String,
    pub narrative: String,
    pub options: Vec<PolicyOption>,
}

impl ScenarioSpec {
    pub fn option_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.options.iter().map(|o| o.id)
    }

    pub fn option(&self, id: u32) -> Option<&PolicyOption> {
        self.options.iter().find(|o| o.id == id)
    }

    /// Checks the scenario invariants; `path` is only used to label errors.
    pub fn validate(&self, path: &Path) -> Result<(), ConfigError> {
        if self.title.trim().is_empty() {
            return Err(ConfigError::validation(path, "title", "must not be empty"));
        }
        if self.narrative.trim().is_empty() {
            return Err(ConfigError::validation(path, "narrative", "must not be empty"));
        }
        if self.options.len() < 2 {
            return Err(ConfigError::validation(
                path,
                "options",
                format!("too few options: need at least 2, found {}", self.options.len()),
            ));
        }
        let mut seen = HashSet::new();
        for (idx, opt) in self.options.iter().enumerate() {
            if !seen.insert(opt.id) {
                return Err(ConfigError::validation(
                    path,
                    format!("options[{idx}].id"),
                    format!("duplicate id {}", opt.id),
                ));
            }
            if opt.label.trim().is_empty() {
                return Err(ConfigError::validation(path, format!("options[{idx}].label"), "must not be empty"));
            }
            if opt.description.trim().is_empty() {
                return Err(ConfigError::validation(
                    path,
                    format!("options[{idx}].description"),
                    "must not be empty",
                ));
            }
        }
        for (idx, opt) in self.options.iter().enumerate() {
            let expected = idx as u32 + 1;
            if opt.id != expected {
                return Err(ConfigError::validation(
                    path,
                    format!("options[{idx}].id"),
                    format!("option ids must be 1..{} in order; expected {expected}, found {}", self.options.len(), opt.id),
                ));
            }
        }
        Ok(())
    }
}

/// A structured moral lens rendered into a persona's system message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaSpec {
    pub name: String,
    pub principle: String,
    pub approach: Vec<String>,
    pub core_questions: Vec<String>,
    pub decision_criteria: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deliberation_style: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forbidden_moves: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strengths: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub challenges: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub citations: Option<Vec<String>>,
}

// Every field optional so that a missing required field is reported as a
// validation error naming the field rather than a serde parse failure.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPersona {
    name: Option<String>,
    principle: Option<String>,
    approach: Option<Vec<String>>,
    core_questions: Option<Vec<String>>,
    decision_criteria: Option<Vec<String>>,
    deliberation_style: Option<String>,
    forbidden_moves: Option<Vec<String>>,
    strengths: Option<Vec<String>>,
    challenges: Option<Vec<String>>,
    citations: Option<Vec<String>>,
}

impl RawPersona {
    fn into_spec(self, path: &Path) -> Result<PersonaSpec, ConfigError> {
        fn text(path: &Path, field: &str, v: Option<String>) -> Result<String, ConfigError> {
            match v {
                None => Err(ConfigError::validation(path, field, "required field is missing")),
                Some(s) if s.trim().is_empty() => Err(ConfigError::validation(path, field, "must not be empty")),
                Some(s) => Ok(s),
            }
        }
        fn list(path: &Path, field: &str, v: Option<Vec<String>>) -> Result<Vec<String>, ConfigError> {
            match v {
                None => Err(ConfigError::validation(path, field, "required field is missing")),
                Some(items) if items.is_empty() => {
                    Err(ConfigError::validation(path, field, "must have at least one entry"))
                }
                Some(items) => {
                    if let Some(i) = items.iter().position(|s| s.trim().is_empty()) {
                        return Err(ConfigError::validation(path, format!("{field}[{i}]"), "must not be empty"));
                    }
                    Ok(items)
                }
            }
        }

        Ok(PersonaSpec {
            name: text(path, "name", self.name)?,
            principle: text(path, "principle", self.principle)?,
            approach: list(path, "approach", self.approach)?,
            core_questions: list(path, "core_questions", self.core_questions)?,
            decision_criteria: list(path, "decision_criteria", self.decision_criteria)?,
            deliberation_style: self.deliberation_style.filter(|s| !s.trim().is_empty()),
            forbidden_moves: self.forbidden_moves.unwrap_or_default(),
            strengths: self.strengths,
            challenges: self.challenges,
            citations: self.citations,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backend_kind: BackendKind,
    pub model_id: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub parallel_independent_calls: bool,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_max_output_tokens() -> u32 {
    DEFAULT_MAX_OUTPUT_TOKENS
}
fn default_timeout() -> u64 {
    DEFAULT_REQUEST_TIMEOUT_SECS
}
fn default_max_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}

impl ModelConfig {
    /// A scripted configuration with every optional field at its default.
    pub fn scripted(model_id: impl Into<String>) -> Self {
        ModelConfig {
            backend_kind: BackendKind::Scripted,
            model_id: model_id.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            endpoint_url: None,
            request_timeout_secs: DEFAULT_REQUEST_TIMEOUT_SECS,
            max_retries: DEFAULT_MAX_RETRIES,
            parallel_independent_calls: false,
        }
    }

    pub fn request_timeout(&self) -> std::time::Duration {
        std::time::Duration::from_secs(self.request_timeout_secs)
    }

    pub fn validate(&self, path: &Path) -> Result<(), ConfigError> {
        if self.model_id.trim().is_empty() {
            return Err(ConfigError::validation(path, "model_id", "must not be empty"));
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(ConfigError::validation(
                path,
                "temperature",
                format!("must be within [0, 2], found {}", self.temperature),
            ));
        }
        if self.max_output_tokens == 0 {
            return Err(ConfigError::validation(path, "max_output_tokens", "must be positive"));
        }
        if self.request_timeout_secs == 0 {
            return Err(ConfigError::validation(path, "request_timeout_secs", "must be positive"));
        }
        if self.max_retries > MAX_RETRIES_LIMIT {
            return Err(ConfigError::validation(
                path,
                "max_retries",
                format!("must be at most {MAX_RETRIES_LIMIT}, found {}", self.max_retries),
            ));
        }
        let has_endpoint = self.endpoint_url.as_deref().is_some_and(|u| !u.trim().is_empty());
        match self.backend_kind {
            BackendKind::Live if !has_endpoint => Err(ConfigError::validation(
                path,
                "endpoint_url",
                "required when backend_kind is live",
            )),
            BackendKind::Scripted if self.endpoint_url.is_some() => Err(ConfigError::validation(
                path,
                "endpoint_url",
                "only allowed when backend_kind is live",
            )),
            _ => Ok(()),
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(ConfigError::FileMissing {
            path: path.to_path_buf(),
        }),
        Err(source) => Err(ConfigError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}

pub fn parse_scenario(text: &str, path: &Path) -> Result<ScenarioSpec, ConfigError> {
    let spec: ScenarioSpec = serde_yaml::from_str(text).map_err(|e| ConfigError::parse(path, e))?;
    spec.validate(path)?;
    Ok(spec)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, ConfigError> {
    parse_scenario(&read(path)?, path)
}

pub fn parse_persona(text: &str, path: &Path) -> Result<PersonaSpec, ConfigError> {
    let raw: RawPersona = serde_yaml::from_str(text).map_err(|e| ConfigError::parse(path, e))?;
    raw.into_spec(path)
}

pub fn load_persona(path: &Path) -> Result<PersonaSpec, ConfigError> {
    parse_persona(&read(path)?, path)
}

/// Lists persona definition files (`.yaml` / `.yml`) sorted byte-wise by file
/// name. This order is the canonical speaking order.
pub fn persona_files(dir: &Path) -> Result<Vec<PathBuf>, ConfigError> {
    if !dir.is_dir() {
        return Err(ConfigError::FileMissing { path: dir.to_path_buf() });
    }
    let entries = fs::read_dir(dir).map_err(|source| ConfigError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| ConfigError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        let is_yaml = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("yaml") || e.eq_ignore_ascii_case("yml"));
        if is_yaml && path.is_file() {
            files.push(path);
        }
    }
    files.sort_by(|a, b| {
        a.file_name()
            .map(|n| n.as_encoded_bytes())
            .cmp(&b.file_name().map(|n| n.as_encoded_bytes()))
    });
    Ok(files)
}

/// One persona file and whether it loaded.
pub type PersonaVerdict = (PathBuf, Result<PersonaSpec, ConfigError>);

/// Per-file verdicts for a persona directory, including the cross-file
/// duplicate-name check. Used by `load_personas` and by the validate command.
pub fn check_persona_dir(dir: &Path) -> Result<Vec<PersonaVerdict>, ConfigError> {
    let files = persona_files(dir)?;
    if files.is_empty() {
        return Err(ConfigError::EmptyPanel { path: dir.to_path_buf() });
    }
    let mut names = HashSet::new();
    let mut verdicts = Vec::with_capacity(files.len());
    for path in files {
        let verdict = load_persona(&path).and_then(|spec| {
            if names.insert(spec.name.clone()) {
                Ok(spec)
            } else {
                Err(ConfigError::validation(&path, "name", format!("duplicate persona name `{}`", spec.name)))
            }
        });
        verdicts.push((path, verdict));
    }
    Ok(verdicts)
}

pub fn load_personas(dir: &Path) -> Result<Vec<PersonaSpec>, ConfigError> {
    check_persona_dir(dir)?.into_iter().map(|(_, v)| v).collect()
}

pub fn parse_model_config(text: &str, path: &Path) -> Result<ModelConfig, ConfigError> {
    let cfg: ModelConfig = serde_yaml::from_str(text).map_err(|e| ConfigError::parse(path, e))?;
    cfg.validate(path)?;
    Ok(cfg)
}

pub fn load_model_config(path: &Path) -> Result<ModelConfig, ConfigError> {
    parse_model_config(&read(path)?, path)
}

/// Any of the three input documents, as identified by `load_document`.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigDocument {
    Scenario(ScenarioSpec),
    Persona(PersonaSpec),
    Model(ModelConfig),
}

impl ConfigDocument {
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigDocument::Scenario(_) => "scenario",
            ConfigDocument::Persona(_) => "persona",
            ConfigDocument::Model(_) => "model config",
        }
    }
}

/// Loads a single YAML file, telling the document kinds apart by their
/// distinguishing key (`options` for a scenario, `backend_kind` for a model
/// config, persona otherwise).
pub fn load_document(path: &Path) -> Result<ConfigDocument, ConfigError> {
    let text = read(path)?;
    let value: serde_yaml::Value = serde_yaml::from_str(&text).map_err(|e| ConfigError::parse(path, e))?;
    let has = |key: &str| value.as_mapping().is_some_and(|m| m.contains_key(key));
    if has("options") {
        parse_scenario(&text, path).map(ConfigDocument::Scenario)
    } else if has("backend_kind") {
        parse_model_config(&text, path).map(ConfigDocument::Model)
    } else {
        parse_persona(&text, path).map(ConfigDocument::Persona)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test.yaml")
    }

    const TWO_OPTIONS: &str = "title: T\nnarrative: N\noptions:\n  - {id: 1, label: A, description: a}\n  - {id: 2, label: B, description: b}\n";

    #[test]
    fn scenario_minimal() {
        let s = parse_scenario(TWO_OPTIONS, p()).unwrap();
        assert_eq!(s.option_ids().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn scenario_duplicate_id() {
        let doc = "title: T\nnarrative: N\noptions:\n  - {id: 1, label: A, description: a}\n  - {id: 1, label: B, description: b}\n";
        match parse_scenario(doc, p()) {
            Err(ConfigError::Validation { field, message, .. }) => {
                assert_eq!(field, "options[1].id");
                assert!(message.contains("duplicate"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scenario_too_few_options() {
        let doc = "title: T\nnarrative: N\noptions:\n  - {id: 1, label: A, description: a}\n";
        let err = parse_scenario(doc, p()).unwrap_err();
        assert!(err.to_string().contains("too few options"), "{err}");
    }

    #[test]
    fn scenario_non_contiguous() {
        let doc = "title: T\nnarrative: N\noptions:\n  - {id: 1, label: A, description: a}\n  - {id: 3, label: B, description: b}\n";
        assert!(matches!(parse_scenario(doc, p()), Err(ConfigError::Validation { .. })));
    }

    #[test]
    fn scenario_empty_label() {
        let doc = "title: T\nnarrative: N\noptions:\n  - {id: 1, label: '', description: a}\n  - {id: 2, label: B, description: b}\n";
        let err = parse_scenario(doc, p()).unwrap_err();
        assert!(err.to_string().contains("options[0].label"));
    }

    #[test]
    fn scenario_unknown_key_rejected_with_line() {
        let doc = "title: T\nnarative: N\noptions: []\n";
        match parse_scenario(doc, p()) {
            Err(ConfigError::Parse { line, message, .. }) => {
                assert_eq!(line, Some(2));
                assert!(message.contains("narative"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn persona_missing_principle_names_field() {
        let doc = "name: X\napproach: [a]\ncore_questions: [q]\ndecision_criteria: [d]\n";
        match parse_persona(doc, Path::new("x.yaml")) {
            Err(ConfigError::Validation { path, field, .. }) => {
                assert_eq!(field, "principle");
                assert_eq!(path, Path::new("x.yaml"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn persona_empty_list_rejected() {
        let doc = "name: X\nprinciple: P\napproach: []\ncore_questions: [q]\ndecision_criteria: [d]\n";
        let err = parse_persona(doc, p()).unwrap_err();
        assert!(err.to_string().contains("`approach`"));
    }

    #[test]
    fn persona_optional_fields_default() {
        let doc = "name: X\nprinciple: P\napproach: [a]\ncore_questions: [q]\ndecision_criteria: [d]\n";
        let spec = parse_persona(doc, p()).unwrap();
        assert!(spec.forbidden_moves.is_empty());
        assert!(spec.citations.is_none());
    }

    #[test]
    fn model_config_defaults() {
        let cfg = parse_model_config("backend_kind: scripted\nmodel_id: fixture\n", p()).unwrap();
        assert_eq!(cfg, ModelConfig::scripted("fixture"));
        assert_eq!(cfg.temperature, 0.7);
        assert!(!cfg.parallel_independent_calls);
    }

    #[test]
    fn model_config_live_requires_endpoint() {
        let err = parse_model_config("backend_kind: live\nmodel_id: o3\n", p()).unwrap_err();
        match err {
            ConfigError::Validation { field, .. } => assert_eq!(field, "endpoint_url"),
            other => panic!("unexpected {other:?}"),
        }
        let ok = parse_model_config(
            "backend_kind: live\nmodel_id: o3\ntemperature: 0.7\nendpoint_url: http://localhost:1/v1/chat/completions\n",
            p(),
        )
        .unwrap();
        assert_eq!(ok.backend_kind, BackendKind::Live);
    }

    #[test]
    fn model_config_ranges() {
        assert!(parse_model_config("backend_kind: scripted\nmodel_id: m\ntemperature: 2.5\n", p()).is_err());
        assert!(parse_model_config("backend_kind: scripted\nmodel_id: m\nmax_retries: 11\n", p()).is_err());
        assert!(parse_model_config("backend_kind: scripted\nmodel_id: m\nmax_retries: 10\n", p()).is_ok());
        assert!(parse_model_config("backend_kind: scripted\nmodel_id: m\nmax_output_tokens: 0\n", p()).is_err());
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_scenario(Path::new("/nonexistent/options.yaml")),
            Err(ConfigError::FileMissing { .. })
        ));
    }
}
