//! Run configuration: a JSON file with every section optional, overridden by
//! command-line flags. Secrets never live here; the LLM key comes from the
//! environment.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mpvr_core::{ClassifierConfig, MetaGenConfig, Validate};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    /// `http`, `mock`, `replay` or `synthetic`.
    pub backend: Option<String>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    /// Fixture directory for `mock`, cache directory for `replay`.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    /// `files`, `http` or `synthetic`.
    pub backend: Option<String>,
    pub path: Option<PathBuf>,
    pub url: Option<String>,
    pub dim: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub fixtures: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub corpora: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    llm: LlmSection,
    embedding: EmbeddingSection,
    paths: PathsSection,
    meta_gen: Option<Value>,
    classifier: Option<Value>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunConfig {
    pub llm: LlmSection,
    pub embedding: EmbeddingSection,
    pub paths: PathsSection,
    pub meta_gen: MetaGenConfig,
    pub classifier: ClassifierConfig,
}

/// Fields given in `partial` replace those of `base`; the rest keep their
/// defaults.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, partial: Option<Value>) -> Result<T> {
    let Some(partial) = partial else {
        return Ok(serde_json::from_value(serde_json::to_value(base)?)?);
    };
    let mut merged = serde_json::to_value(base)?;
    match (merged.as_object_mut(), partial) {
        (Some(target), Value::Object(fields)) => target.extend(fields),
        (_, other) => anyhow::bail!("expected an object, found {other}"),
    }
    Ok(serde_json::from_value(merged)?)
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text)?;
        let cfg = Self {
            llm: raw.llm,
            embedding: raw.embedding,
            paths: raw.paths,
            meta_gen: overlay(&MetaGenConfig::default(), raw.meta_gen).context("section meta_gen")?,
            classifier: overlay(&ClassifierConfig::default(), raw.classifier).context("section classifier")?,
        };
        cfg.meta_gen.check()?;
        cfg.classifier.check()?;
        Ok(cfg)
    }

    pub fn model(&self) -> String {
        self.llm.model.clone().unwrap_or_else(|| DEFAULT_MODEL.to_string())
    }

    pub fn fixtures(&self) -> PathBuf {
        self.paths.fixtures.clone().unwrap_or_else(|| PathBuf::from("fixtures"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::parse(r#"{"meta_gen": {"n_templates": 5}, "classifier": {"temperature": 0.05}}"#).unwrap();
        assert_eq!(cfg.meta_gen.n_templates, 5);
        assert_eq!(cfg.meta_gen.prompts_per_template, 10);
        assert_eq!(cfg.classifier.temperature, 0.05);
        assert_eq!(cfg.model(), DEFAULT_MODEL);
    }

    #[test]
    fn invalid_values_and_unknown_fields_are_rejected() {
        assert!(RunConfig::parse(r#"{"classifier": {"temperature": 0}}"#).is_err());
        assert!(RunConfig::parse(r#"{"llm": {"api_key": "x"}}"#).is_err());
        assert!(RunConfig::parse(r#"{"meta_gen": 3}"#).is_err());
    }
}
