//! Mean-of-prompts zero-shot classifiers and cosine-softmax prediction.

mod ensemble;
mod export;
mod transforms;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::domain::{
    ClassifierConfig, DomainError, EmbeddingVector, EnsembleStrategy, PredictionResult, Validate,
    ZeroShotClassifier,
};
use crate::embedding::{EmbedError, EmbeddingBackend};

pub(crate) use ensemble::anchored_mean;
pub use ensemble::{ensemble_embedding_space, ensemble_probability_space, SourceSet};
pub use export::{load_classifier, save_classifier, ClassifierHeader, CLASSIFIER_FILE};
pub use transforms::{
    subsample_prompts, truncate_prompts, truncate_prompts_in_range, truncate_text, window_len,
    TRUNCATE_MAX, TRUNCATE_MIN,
};

/// Below this norm a class mean is considered cancelled out.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("class {0:?} has no texts")]
    MissingClassTexts(String),
    #[error("class {0:?} embeddings cancel out")]
    DegenerateClassEmbedding(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid source set: {0}")]
    InvalidSourceSet(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Invalid(#[from] DomainError),
    #[error("{0}")]
    Io(String),
}

/// Builds one class embedding per entry of `class_order`: the normalized
/// mean of the unit-norm prompt embeddings, summed in stored order.
pub fn build_classifier<B: EmbeddingBackend + ?Sized>(
    per_class_texts: &BTreeMap<String, Vec<String>>,
    backend: &B,
    class_order: &[String],
    source_tag: &str,
) -> Result<ZeroShotClassifier, ClassifierError> {
    if class_order.is_empty() {
        return Err(ClassifierError::InvalidArgument("class_order is empty".into()));
    }
    let mut dim = None;
    let mut class_embeddings = Vec::with_capacity(class_order.len());
    for class in class_order {
        let texts = per_class_texts
            .get(class)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| ClassifierError::MissingClassTexts(class.clone()))?;
        let vectors = backend.embed_texts(texts)?;
        let d = *dim.get_or_insert(vectors[0].dim());
        let mut sum = vec![0.0f64; d];
        for v in &vectors {
            if v.dim() != d {
                return Err(ClassifierError::DimensionMismatch {
                    expected: d,
                    found: v.dim(),
                });
            }
            for (s, x) in sum.iter_mut().zip(&v.values) {
                *s += x;
            }
        }
        let n = vectors.len() as f64;
        let mean = EmbeddingVector::new(sum.into_iter().map(|s| s / n).collect());
        class_embeddings.push(unit_or_degenerate(mean, class)?);
    }
    Ok(ZeroShotClassifier {
        class_labels: class_order.to_vec(),
        class_embeddings,
        dim: dim.unwrap_or(0),
        source_tag: source_tag.to_string(),
    })
}

pub(crate) fn unit_or_degenerate(
    v: EmbeddingVector,
    class: &str,
) -> Result<EmbeddingVector, ClassifierError> {
    if v.norm() < DEGENERATE_NORM {
        return Err(ClassifierError::DegenerateClassEmbedding(class.to_string()));
    }
    v.normalized()
        .ok_or_else(|| ClassifierError::DegenerateClassEmbedding(class.to_string()))
}

fn check_temperature(tau: f64) -> Result<(), ClassifierError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(ClassifierError::InvalidArgument(format!(
            "temperature must be > 0, got {tau}"
        )))
    }
}

/// softmax(cos(t_i, x) / tau), stabilized by subtracting the largest logit.
pub fn predict(
    x: &EmbeddingVector,
    clf: &ZeroShotClassifier,
    tau: f64,
) -> Result<PredictionResult, ClassifierError> {
    check_temperature(tau)?;
    if x.dim() != clf.dim {
        return Err(ClassifierError::DimensionMismatch {
            expected: clf.dim,
            found: x.dim(),
        });
    }
    let logits: Vec<f64> = clf.class_embeddings.iter().map(|t| t.dot(x) / tau).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probabilities = exps.into_iter().map(|e| e / total).collect();
    Ok(PredictionResult::from_probabilities(probabilities, &clf.class_labels))
}

/// What an evaluation scores images with.
#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    Single(ZeroShotClassifier),
    /// Mean of per-source softmax outputs.
    ProbabilityEnsemble(SourceSet),
}

impl Scorer {
    /// Embedding-space ensembles collapse to a single classifier up front.
    pub fn from_sources(sources: SourceSet, strategy: EnsembleStrategy) -> Result<Self, ClassifierError> {
        match strategy {
            EnsembleStrategy::EmbeddingSpace => Ok(Scorer::Single(ensemble_embedding_space(&sources)?)),
            EnsembleStrategy::ProbabilitySpace => Ok(Scorer::ProbabilityEnsemble(sources)),
        }
    }

    pub fn class_labels(&self) -> &[String] {
        match self {
            Scorer::Single(c) => &c.class_labels,
            Scorer::ProbabilityEnsemble(s) => s.class_labels(),
        }
    }

    pub fn source_tags(&self) -> Vec<String> {
        match self {
            Scorer::Single(c) => vec![c.source_tag.clone()],
            Scorer::ProbabilityEnsemble(s) => s.tags(),
        }
    }

    pub fn strategy(&self) -> Option<EnsembleStrategy> {
        match self {
            Scorer::Single(_) => None,
            Scorer::ProbabilityEnsemble(_) => Some(EnsembleStrategy::ProbabilitySpace),
        }
    }

    pub fn predict(&self, x: &EmbeddingVector, cfg: &ClassifierConfig) -> Result<PredictionResult, ClassifierError> {
        cfg.check()?;
        match self {
            Scorer::Single(c) => predict(x, c, cfg.temperature),
            Scorer::ProbabilityEnsemble(s) => ensemble_probability_space(s, x, cfg.temperature),
        }
    }
}
