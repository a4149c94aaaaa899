//! Shared data types for the pipeline.
//!
//! Every type exposes its invariants through [`Validate`], which returns the
//! list of violations instead of failing on the first one.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::sha256_hex;

/// Canonical class-name placeholder inside query templates.
pub const PLACEHOLDER: &str = "{}";

/// Tolerance for the unit-norm contract on embeddings.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Tolerance for probability vectors summing to one.
pub const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid {what}: {}", violations.join("; "))]
    Invalid {
        what: &'static str,
        violations: Vec<String>,
    },
    #[error("{path}: {message}")]
    Unreadable { path: String, message: String },
}

/// Invariant checking for domain values. An empty list means valid.
pub trait Validate {
    const NAME: &'static str;

    fn violations(&self) -> Vec<String>;

    fn is_valid(&self) -> bool {
        self.violations().is_empty()
    }

    fn validated(self) -> Result<Self, DomainError>
    where
        Self: Sized,
    {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(DomainError::Invalid {
                what: Self::NAME,
                violations,
            })
        }
    }

    fn check(&self) -> Result<(), DomainError> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(DomainError::Invalid {
                what: Self::NAME,
                violations,
            })
        }
    }
}

/// Whitespace-token count. Used for diagnostics only, never for budgets.
pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Case- and whitespace-insensitive comparison key.
pub fn normalize_key(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// A downstream classification task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub dataset_name: String,
    pub metadata: String,
    pub class_labels: Vec<String>,
    #[serde(default = "default_split_id")]
    pub split_id: String,
}

fn default_split_id() -> String {
    "test".to_string()
}

impl TaskSpec {
    pub fn new(
        dataset_name: impl Into<String>,
        metadata: impl Into<String>,
        class_labels: Vec<String>,
    ) -> Self {
        Self {
            dataset_name: dataset_name.into(),
            metadata: metadata.into(),
            class_labels,
            split_id: default_split_id(),
        }
    }

    /// Reads and validates a task JSON file.
    pub fn load(path: &std::path::Path) -> Result<Self, DomainError> {
        let unreadable = |message: String| DomainError::Unreadable {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| unreadable(e.to_string()))?;
        let task: Self = serde_json::from_str(&text).map_err(|e| unreadable(e.to_string()))?;
        task.validated()
    }
}

impl Validate for TaskSpec {
    const NAME: &'static str = "TaskSpec";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dataset_name.trim().is_empty() {
            out.push("dataset_name is empty".to_string());
        }
        if self.metadata.trim().is_empty() {
            out.push("metadata is empty".to_string());
        }
        if self.class_labels.is_empty() {
            out.push("class_labels is empty".to_string());
        }
        let mut seen = HashSet::new();
        for (i, label) in self.class_labels.iter().enumerate() {
            let key = label.trim().to_lowercase();
            if key.is_empty() {
                out.push(format!("class_labels[{i}] is empty"));
            } else if !seen.insert(key) {
                out.push(format!("class_labels[{i}] duplicates {label:?}"));
            }
        }
        out
    }
}

/// Stage-1 output: a class-agnostic query with one `{}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryTemplate {
    pub template_id: String,
    pub text: String,
}

impl QueryTemplate {
    /// Builds a template from already-normalized text; the id is a content
    /// hash prefix.
    pub fn new(text: impl Into<String>) -> Result<Self, DomainError> {
        let text = text.into();
        Self {
            template_id: template_id_for(&text),
            text,
        }
        .validated()
    }

    /// Fill the placeholder verbatim.
    pub fn fill(&self, class_label: &str) -> String {
        self.text.replacen(PLACEHOLDER, class_label, 1)
    }
}

pub fn template_id_for(text: &str) -> String {
    sha256_hex(text.as_bytes())[..12].to_string()
}

impl Validate for QueryTemplate {
    const NAME: &'static str = "QueryTemplate";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let count = self.text.matches(PLACEHOLDER).count();
        if count != 1 {
            out.push(format!("expected exactly one {{}} placeholder, found {count}"));
        }
        if crate::templates::has_alternate_placeholder(&self.text) {
            out.push("contains a non-canonical placeholder form".to_string());
        }
        if self.text.replace(PLACEHOLDER, "").trim().is_empty() {
            out.push("text is empty apart from the placeholder".to_string());
        }
        if self.text.trim() != self.text {
            out.push("text has surrounding whitespace".to_string());
        }
        if self.template_id.is_empty() {
            out.push("template_id is empty".to_string());
        }
        out
    }
}

/// A template instantiated with a concrete class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmQuery {
    pub template_id: String,
    pub class_label: String,
    pub text: String,
}

impl Validate for LlmQuery {
    const NAME: &'static str = "LlmQuery";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.text.contains(&self.class_label) {
            out.push("text does not contain the class label".to_string());
        }
        if self.text.contains(PLACEHOLDER) && !self.class_label.contains(PLACEHOLDER) {
            out.push("text still contains a placeholder".to_string());
        }
        out
    }
}

/// Stage-2 output: one class-specific description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VlmPrompt {
    pub text: String,
    pub class_label: String,
    pub template_id: String,
    pub llm_id: String,
    pub token_count: usize,
}

impl VlmPrompt {
    pub fn new(
        text: &str,
        class_label: impl Into<String>,
        template_id: impl Into<String>,
        llm_id: impl Into<String>,
    ) -> Self {
        let text = text.trim().to_string();
        let token_count = whitespace_tokens(&text);
        Self {
            text,
            class_label: class_label.into(),
            template_id: template_id.into(),
            llm_id: llm_id.into(),
            token_count,
        }
    }
}

impl Validate for VlmPrompt {
    const NAME: &'static str = "VlmPrompt";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.text.is_empty() {
            out.push("text is empty".to_string());
        }
        if self.text.trim() != self.text {
            out.push("text has surrounding whitespace".to_string());
        }
        if self.token_count != whitespace_tokens(&self.text) {
            out.push(format!(
                "token_count {} does not match text ({})",
                self.token_count,
                whitespace_tokens(&self.text)
            ));
        }
        out
    }
}

/// Generation parameters. Stored verbatim inside every corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaGenConfig {
    pub n_templates: usize,
    pub prompts_per_template: usize,
    pub max_tokens: usize,
    pub seed: u64,
    #[serde(default = "default_sampling_temperature")]
    pub sampling_temperature: f64,
}

fn default_sampling_temperature() -> f64 {
    0.7
}

impl Default for MetaGenConfig {
    fn default() -> Self {
        Self {
            n_templates: 30,
            prompts_per_template: 10,
            max_tokens: 50,
            seed: 0,
            sampling_temperature: default_sampling_temperature(),
        }
    }
}

impl Validate for MetaGenConfig {
    const NAME: &'static str = "MetaGenConfig";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_templates == 0 {
            out.push("n_templates must be >= 1".to_string());
        }
        if self.prompts_per_template == 0 {
            out.push("prompts_per_template must be >= 1".to_string());
        }
        if self.max_tokens == 0 {
            out.push("max_tokens must be >= 1".to_string());
        }
        if self.sampling_temperature.is_nan() || self.sampling_temperature < 0.0 {
            out.push("sampling_temperature must be >= 0".to_string());
        }
        out
    }
}

/// All generated prompts for one (dataset, LLM) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCorpus {
    pub dataset_name: String,
    pub llm_id: String,
    pub entries: BTreeMap<String, Vec<VlmPrompt>>,
    pub generation_config: MetaGenConfig,
}

impl PromptCorpus {
    pub fn n_prompts(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// Prompt texts per class, in stored order.
    pub fn texts(&self) -> BTreeMap<String, Vec<String>> {
        self.entries
            .iter()
            .map(|(class, prompts)| {
                (
                    class.clone(),
                    prompts.iter().map(|p| p.text.clone()).collect(),
                )
            })
            .collect()
    }

    /// Violations of the "no class outside the task" rule.
    pub fn violations_against(&self, task: &TaskSpec) -> Vec<String> {
        let known: HashSet<&str> = task.class_labels.iter().map(String::as_str).collect();
        self.entries
            .keys()
            .filter(|k| !known.contains(k.as_str()))
            .map(|k| format!("class {k:?} is not part of task {}", task.dataset_name))
            .collect()
    }
}

impl Validate for PromptCorpus {
    const NAME: &'static str = "PromptCorpus";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dataset_name.trim().is_empty() {
            out.push("dataset_name is empty".to_string());
        }
        if self.llm_id.trim().is_empty() {
            out.push("llm_id is empty".to_string());
        }
        if self.entries.is_empty() {
            out.push("corpus has no classes".to_string());
        }
        for (class, prompts) in &self.entries {
            if prompts.is_empty() {
                out.push(format!("class {class:?} has no prompts"));
            }
            for (i, p) in prompts.iter().enumerate() {
                if &p.class_label != class {
                    out.push(format!("{class:?}[{i}] is labelled {:?}", p.class_label));
                }
                if p.llm_id != self.llm_id {
                    out.push(format!("{class:?}[{i}] has llm_id {:?}", p.llm_id));
                }
                out.extend(
                    p.violations()
                        .into_iter()
                        .map(|v| format!("{class:?}[{i}]: {v}")),
                );
            }
        }
        out.extend(
            self.generation_config
                .violations()
                .into_iter()
                .map(|v| format!("generation_config: {v}")),
        );
        out
    }
}

/// A real-valued embedding. Arithmetic is always f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOL
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Scales to unit length; `None` for a (numerically) zero vector.
    pub fn normalized(&self) -> Option<EmbeddingVector> {
        let norm = self.norm();
        if norm < 1e-12 || !norm.is_finite() {
            return None;
        }
        Some(EmbeddingVector::new(
            self.values.iter().map(|v| v / norm).collect(),
        ))
    }
}

impl Validate for EmbeddingVector {
    const NAME: &'static str = "EmbeddingVector";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.values.is_empty() {
            out.push("dim must be positive".to_string());
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            out.push("contains non-finite values".to_string());
        }
        out
    }
}

/// One unit-norm embedding per class, in a fixed class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotClassifier {
    pub class_labels: Vec<String>,
    pub class_embeddings: Vec<EmbeddingVector>,
    pub dim: usize,
    pub source_tag: String,
}

impl Validate for ZeroShotClassifier {
    const NAME: &'static str = "ZeroShotClassifier";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dim == 0 {
            out.push("dim must be positive".to_string());
        }
        if self.class_labels.len() != self.class_embeddings.len() {
            out.push(format!(
                "{} labels but {} embeddings",
                self.class_labels.len(),
                self.class_embeddings.len()
            ));
        }
        for (label, emb) in self.class_labels.iter().zip(&self.class_embeddings) {
            if emb.dim() != self.dim {
                out.push(format!("{label:?} has dim {} (expected {})", emb.dim(), self.dim));
            } else if !emb.is_unit() {
                out.push(format!("{label:?} is not unit norm ({})", emb.norm()));
            }
        }
        out
    }
}

/// Class probabilities for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub probabilities: Vec<f64>,
    pub argmax_index: usize,
    pub argmax_label: String,
}

impl PredictionResult {
    /// Picks the strict maximum, ties going to the lowest index.
    pub fn from_probabilities(probabilities: Vec<f64>, labels: &[String]) -> Self {
        let argmax_index = argmax(&probabilities);
        Self {
            argmax_label: labels[argmax_index].clone(),
            probabilities,
            argmax_index,
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl Validate for PredictionResult {
    const NAME: &'static str = "PredictionResult";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.probabilities.is_empty() {
            out.push("no probabilities".to_string());
            return out;
        }
        let sum: f64 = self.probabilities.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            out.push(format!("probabilities sum to {sum}"));
        }
        if self.probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            out.push("probability outside [0, 1]".to_string());
        }
        if self.argmax_index != argmax(&self.probabilities) {
            out.push("argmax_index is not the first maximum".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleStrategy {
    #[default]
    EmbeddingSpace,
    ProbabilitySpace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub temperature: f64,
    #[serde(default)]
    pub ensemble_strategy: EnsembleStrategy,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            temperature: 0.01,
            ensemble_strategy: EnsembleStrategy::EmbeddingSpace,
        }
    }
}

impl Validate for ClassifierConfig {
    const NAME: &'static str = "ClassifierConfig";

    fn violations(&self) -> Vec<String> {
        if self.temperature > 0.0 && self.temperature.is_finite() {
            Vec::new()
        } else {
            vec![format!("temperature must be > 0, got {}", self.temperature)]
        }
    }
}
