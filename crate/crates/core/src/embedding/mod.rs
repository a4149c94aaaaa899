//! Text and image encoders behind one trait. Every backend returns unit-norm
//! vectors; normalization never happens downstream.

mod http;
mod store;
mod synthetic;

use thiserror::Error;

use crate::domain::EmbeddingVector;

pub use http::{HttpEmbedBackend, ServerInfo, MAX_BATCH};
pub use store::{EmbeddingStore, EmbeddingStoreHeader, StoreBackend, INDEX_FILE, PAYLOAD_FILE};
pub use synthetic::{SyntheticBackendConfig, SyntheticEmbedder};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EmbedError {
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("embedding service unavailable: {0}")]
    EmbedServiceUnavailable(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero-length embedding for {0:?}")]
    DegenerateEmbedding(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("embedding service error: {0}")]
    Service(String),
    #[error("store I/O error: {0}")]
    Io(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub trait EmbeddingBackend: Send + Sync {
    /// One unit-norm vector per text, in input order.
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn embed_image(&self, image_ref: &str) -> Result<EmbeddingVector, EmbedError>;

    fn model_id(&self) -> String;
}

impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for &B {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed_texts(texts)
    }
    fn embed_image(&self, image_ref: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed_image(image_ref)
    }
    fn model_id(&self) -> String {
        (**self).model_id()
    }
}

impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for Box<B> {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed_texts(texts)
    }
    fn embed_image(&self, image_ref: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed_image(image_ref)
    }
    fn model_id(&self) -> String {
        (**self).model_id()
    }
}

pub(crate) fn check_inputs(texts: &[String]) -> Result<(), EmbedError> {
    if texts.is_empty() {
        return Err(EmbedError::EmptyInput("no texts".to_string()));
    }
    if let Some(i) = texts.iter().position(|t| t.is_empty()) {
        return Err(EmbedError::EmptyInput(format!("text {i} is empty")));
    }
    Ok(())
}

/// Widens to f64 and rescales to unit length unless already within the
/// unit-norm tolerance, in which case the values are kept exactly.
pub(crate) fn to_unit(values: impl IntoIterator<Item = f64>, key: &str) -> Result<EmbeddingVector, EmbedError> {
    let v = EmbeddingVector::new(values.into_iter().collect());
    if v.is_unit() {
        return Ok(v);
    }
    v.normalized()
        .ok_or_else(|| EmbedError::DegenerateEmbedding(key.to_string()))
}
