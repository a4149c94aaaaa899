//! On-disk prompt corpora: canonical JSON, content hashes, statistics and an
//! importer for plain `{class: [prompt, ...]}` files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{DomainError, MetaGenConfig, PromptCorpus, Validate, VlmPrompt};
use crate::fsutil::write_atomic;
use crate::hash::{canonical_json, sha256_hex};

pub const CORPUS_FORMAT_VERSION: u64 = 1;

/// Template id given to prompts imported without provenance.
pub const EXTERNAL_TEMPLATE_ID: &str = "external";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("corpus format_version {0} is not supported (expected {CORPUS_FORMAT_VERSION})")]
    FormatVersionUnsupported(u64),
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error(transparent)]
    Invalid(#[from] DomainError),
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> CorpusError {
    CorpusError::SchemaViolation {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredPrompt {
    pub template_id: String,
    pub text: String,
}

/// Exact on-disk shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub format_version: u64,
    pub dataset_name: String,
    pub llm_id: String,
    pub generation_config: MetaGenConfig,
    pub classes: BTreeMap<String, Vec<StoredPrompt>>,
}

impl From<&PromptCorpus> for CorpusFile {
    fn from(c: &PromptCorpus) -> Self {
        CorpusFile {
            format_version: CORPUS_FORMAT_VERSION,
            dataset_name: c.dataset_name.clone(),
            llm_id: c.llm_id.clone(),
            generation_config: c.generation_config,
            classes: c
                .entries
                .iter()
                .map(|(class, prompts)| {
                    let stored = prompts
                        .iter()
                        .map(|p| StoredPrompt {
                            template_id: p.template_id.clone(),
                            text: p.text.clone(),
                        })
                        .collect();
                    (class.clone(), stored)
                })
                .collect(),
        }
    }
}

impl CorpusFile {
    pub fn into_corpus(self) -> Result<PromptCorpus, CorpusError> {
        let llm_id = self.llm_id;
        let entries = self
            .classes
            .into_iter()
            .map(|(class, prompts)| {
                let prompts = prompts
                    .into_iter()
                    .map(|p| VlmPrompt::new(&p.text, class.clone(), p.template_id, llm_id.clone()))
                    .collect();
                (class, prompts)
            })
            .collect();
        Ok(PromptCorpus {
            dataset_name: self.dataset_name,
            llm_id,
            entries,
            generation_config: self.generation_config,
        }
        .validated()?)
    }
}

/// Canonical serialization: sorted keys, 2-space indent, trailing newline.
pub fn canonical_bytes(c: &PromptCorpus) -> Result<String, CorpusError> {
    c.check()?;
    canonical_json(&CorpusFile::from(c)).map_err(|e| schema("$", e.to_string()))
}

pub fn corpus_hash(c: &PromptCorpus) -> Result<String, CorpusError> {
    Ok(sha256_hex(canonical_bytes(c)?.as_bytes()))
}

/// Writes the corpus atomically and returns the SHA-256 of the bytes.
pub fn save_corpus(c: &PromptCorpus, path: &Path) -> Result<String, CorpusError> {
    let text = canonical_bytes(c)?;
    write_atomic(path, text.as_bytes()).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(sha256_hex(text.as_bytes()))
}

pub fn load_corpus(path: &Path) -> Result<PromptCorpus, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_corpus(&text)
}

pub fn parse_corpus(text: &str) -> Result<PromptCorpus, CorpusError> {
    let value: Value = serde_json::from_str(text).map_err(|e| schema("$", e.to_string()))?;
    check_schema(&value)?;
    let file: CorpusFile = serde_json::from_value(value).map_err(|e| schema("$", e.to_string()))?;
    file.into_corpus()
}

fn check_schema(root: &Value) -> Result<(), CorpusError> {
    let obj = root.as_object().ok_or_else(|| schema("$", "expected an object"))?;
    let version = obj
        .get("format_version")
        .ok_or_else(|| schema("$.format_version", "missing"))?
        .as_u64()
        .ok_or_else(|| schema("$.format_version", "expected a non-negative integer"))?;
    if version != CORPUS_FORMAT_VERSION {
        return Err(CorpusError::FormatVersionUnsupported(version));
    }
    for key in ["dataset_name", "llm_id"] {
        match obj.get(key) {
            None => return Err(schema(format!("$.{key}"), "missing")),
            Some(v) if !v.is_string() => return Err(schema(format!("$.{key}"), "expected a string")),
            _ => {}
        }
    }
    let config = obj
        .get("generation_config")
        .ok_or_else(|| schema("$.generation_config", "missing"))?;
    serde_json::from_value::<MetaGenConfig>(config.clone())
        .map_err(|e| schema("$.generation_config", e.to_string()))?;
    let classes = obj
        .get("classes")
        .ok_or_else(|| schema("$.classes", "missing"))?
        .as_object()
        .ok_or_else(|| schema("$.classes", "expected an object"))?;
    for (class, prompts) in classes {
        let base = format!("$.classes[{class:?}]");
        let prompts = prompts
            .as_array()
            .ok_or_else(|| schema(&base, "expected an array"))?;
        for (i, p) in prompts.iter().enumerate() {
            let at = format!("{base}[{i}]");
            let p = p.as_object().ok_or_else(|| schema(&at, "expected an object"))?;
            for key in ["text", "template_id"] {
                if !p.get(key).is_some_and(Value::is_string) {
                    return Err(schema(format!("{at}.{key}"), "expected a string"));
                }
            }
        }
    }
    Ok(())
}

/// `corpora/<dataset>/<llm_id>.json`
pub fn corpus_path(root: &Path, dataset: &str, llm_id: &str) -> PathBuf {
    root.join(dataset.to_lowercase()).join(format!("{llm_id}.json"))
}

/// Reads a plain `{class: [prompt, ...]}` map. Blank prompts are dropped.
pub fn import_external(
    text: &str,
    dataset_name: &str,
    llm_id: &str,
    generation_config: MetaGenConfig,
) -> Result<PromptCorpus, CorpusError> {
    let raw: BTreeMap<String, Vec<String>> =
        serde_json::from_str(text).map_err(|e| schema("$", format!("expected {{class: [string]}}: {e}")))?;
    let entries = raw
        .into_iter()
        .map(|(class, prompts)| {
            let prompts = prompts
                .iter()
                .filter(|p| !p.trim().is_empty())
                .map(|p| VlmPrompt::new(p, class.clone(), EXTERNAL_TEMPLATE_ID, llm_id))
                .collect();
            (class, prompts)
        })
        .collect();
    Ok(PromptCorpus {
        dataset_name: dataset_name.to_string(),
        llm_id: llm_id.to_string(),
        entries,
        generation_config,
    }
    .validated()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_classes: usize,
    pub n_prompts_total: usize,
    pub min_prompts_per_class: usize,
    pub mean_prompts_per_class: f64,
    pub max_prompts_per_class: usize,
    pub mean_token_count: f64,
}

pub fn corpus_stats(c: &PromptCorpus) -> CorpusStats {
    let counts: Vec<usize> = c.entries.values().map(Vec::len).collect();
    let total: usize = counts.iter().sum();
    let tokens: usize = c.entries.values().flatten().map(|p| p.token_count).sum();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    CorpusStats {
        n_classes: counts.len(),
        n_prompts_total: total,
        min_prompts_per_class: counts.iter().copied().min().unwrap_or(0),
        mean_prompts_per_class: ratio(total, counts.len()),
        max_prompts_per_class: counts.iter().copied().max().unwrap_or(0),
        mean_token_count: ratio(tokens, total),
    }
}
