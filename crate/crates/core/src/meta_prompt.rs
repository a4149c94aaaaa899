//! Stage-1 meta-prompt: system instructions, one in-context example, and
//! the downstream task specification, in that order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{MetaGenConfig, QueryTemplate, TaskSpec, Validate, PLACEHOLDER};
use crate::templates::serialize_templates;

/// Marker in the system prompt replaced by the number of templates asked for.
pub const N_TEMPLATES_MARKER: &str = "{n_templates}";

pub const DEFAULT_IN_CONTEXT: &str = "dtd";
pub const FALLBACK_IN_CONTEXT: &str = "eurosat";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaPromptError {
    #[error("no in-context example registered under {0:?}")]
    MissingInContextExample(String),
    #[error("the target block would be empty: enable the dataset name, metadata or class names")]
    EmptySection,
    #[error("system prompt is empty")]
    EmptySystemPrompt,
    #[error(transparent)]
    Invalid(#[from] crate::domain::DomainError),
    #[error("fixture {path}: {message}")]
    Fixture { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InContextExample {
    pub dataset_name: String,
    pub metadata: String,
    pub example_templates: Vec<QueryTemplate>,
}

impl Validate for InContextExample {
    const NAME: &'static str = "InContextExample";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.example_templates.is_empty() {
            out.push("example_templates is empty".to_string());
        }
        for (i, t) in self.example_templates.iter().enumerate() {
            out.extend(t.violations().into_iter().map(|v| format!("template {i}: {v}")));
        }
        out
    }
}

/// On-disk shape of `fixtures/incontext/<name>.json`.
#[derive(Debug, Deserialize, Serialize)]
struct InContextFile {
    dataset_name: String,
    metadata: String,
    templates: Vec<String>,
}

impl InContextExample {
    pub fn load(path: &Path) -> Result<Self, MetaPromptError> {
        let fixture_err = |message: String| MetaPromptError::Fixture {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| fixture_err(e.to_string()))?;
        let file: InContextFile =
            serde_json::from_str(&text).map_err(|e| fixture_err(e.to_string()))?;
        let example_templates = file
            .templates
            .into_iter()
            .map(QueryTemplate::new)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(InContextExample {
            dataset_name: file.dataset_name,
            metadata: file.metadata,
            example_templates,
        }
        .validated()?)
    }
}

/// Loads every `*.json` under `dir`, keyed by lower-cased file stem.
pub fn load_registry(dir: &Path) -> Result<BTreeMap<String, InContextExample>, MetaPromptError> {
    let entries = fs::read_dir(dir).map_err(|e| MetaPromptError::Fixture {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    let mut registry = BTreeMap::new();
    for entry in entries.filter_map(Result::ok) {
        let path = entry.path();
        if path.extension().is_some_and(|x| x == "json") {
            let key = path
                .file_stem()
                .map(|s| s.to_string_lossy().to_lowercase())
                .unwrap_or_default();
            registry.insert(key, InContextExample::load(&path)?);
        }
    }
    Ok(registry)
}

pub fn load_system_prompt(path: &Path) -> Result<String, MetaPromptError> {
    let text = fs::read_to_string(path).map_err(|e| MetaPromptError::Fixture {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(text.trim_end().to_string())
}

/// Toggles for the meta-prompt sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetaPromptOptions {
    pub include_dataset_name: bool,
    pub include_metadata: bool,
    pub include_in_context_prompts: bool,
    pub include_class_names: bool,
}

impl Default for MetaPromptOptions {
    fn default() -> Self {
        Self {
            include_dataset_name: true,
            include_metadata: true,
            include_in_context_prompts: true,
            include_class_names: false,
        }
    }
}

impl MetaPromptOptions {
    /// Short row label used in ablation tables.
    pub fn label(&self) -> String {
        let flag = |on: bool| if on { '+' } else { '-' };
        format!(
            "{}name {}metadata {}in-context {}classes",
            flag(self.include_dataset_name),
            flag(self.include_metadata),
            flag(self.include_in_context_prompts),
            flag(self.include_class_names)
        )
    }
}

/// DTD serves every task except DTD itself, which uses EuroSAT.
pub fn select_in_context<'a>(
    task: &TaskSpec,
    registry: &'a BTreeMap<String, InContextExample>,
) -> Result<&'a InContextExample, MetaPromptError> {
    let key = if task.dataset_name.trim().eq_ignore_ascii_case(DEFAULT_IN_CONTEXT) {
        FALLBACK_IN_CONTEXT
    } else {
        DEFAULT_IN_CONTEXT
    };
    registry
        .get(key)
        .ok_or_else(|| MetaPromptError::MissingInContextExample(key.to_string()))
}

pub const IN_CONTEXT_HEADER: &str = "=== Example dataset ===";
pub const TARGET_HEADER: &str = "=== Target dataset ===";

// Keeps the canonical placeholder out of task-provided text.
fn sanitize(text: &str) -> String {
    text.replace(PLACEHOLDER, "{ }")
}

/// The in-context block. Metadata is dropped here too when the metadata
/// toggle is off, so the example and the target stay symmetric.
fn in_context_block(ic: &InContextExample, opts: &MetaPromptOptions) -> String {
    let mut lines = vec![
        IN_CONTEXT_HEADER.to_string(),
        format!("Example dataset name: {}", ic.dataset_name.trim()),
    ];
    if opts.include_metadata {
        lines.push(format!("Example dataset description: {}", ic.metadata.trim()));
    }
    if opts.include_in_context_prompts {
        lines.push("Example queries:".to_string());
        lines.push(serialize_templates(&ic.example_templates));
    }
    lines.join("\n")
}

pub fn target_block(task: &TaskSpec, opts: &MetaPromptOptions) -> Result<String, MetaPromptError> {
    if !(opts.include_dataset_name || opts.include_metadata || opts.include_class_names) {
        return Err(MetaPromptError::EmptySection);
    }
    let mut lines = vec![TARGET_HEADER.to_string()];
    if opts.include_dataset_name {
        lines.push(format!("Target dataset name: {}", sanitize(task.dataset_name.trim())));
    }
    if opts.include_metadata {
        lines.push(format!("Target dataset description: {}", sanitize(task.metadata.trim())));
    }
    if opts.include_class_names {
        let labels: Vec<String> = task.class_labels.iter().map(|l| sanitize(l.trim())).collect();
        lines.push(format!("Target class names: {}", labels.join(", ")));
    }
    Ok(lines.join("\n"))
}

pub fn compose_meta_prompt(
    system_prompt: &str,
    ic: &InContextExample,
    task: &TaskSpec,
    opts: &MetaPromptOptions,
    cfg: &MetaGenConfig,
) -> Result<String, MetaPromptError> {
    if system_prompt.trim().is_empty() {
        return Err(MetaPromptError::EmptySystemPrompt);
    }
    task.check()?;
    let target = target_block(task, opts)?;
    let system = system_prompt
        .trim()
        .replace(N_TEMPLATES_MARKER, &cfg.n_templates.to_string());
    Ok(format!(
        "{system}\n\n{}\n\n{target}\n",
        in_context_block(ic, opts)
    ))
}
