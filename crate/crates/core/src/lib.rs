//! Two-stage LLM meta-prompting for zero-shot image classification with
//! dual-encoder vision-language models.
//!
//! Stage 1 turns a dataset description into generic query templates, stage 2
//! asks the LLM one templated question per class and keeps the answers as
//! class prompts. Each class is then represented by the mean embedding of
//! its prompts.

pub mod ablation;
pub mod classifier;
pub mod corpus;
pub mod domain;
pub mod embedding;
pub mod eval;
pub mod factory;
mod fsutil;
pub mod hash;
pub mod http;
pub mod llm;
pub mod meta_prompt;
pub mod templates;

pub use classifier::{
    build_classifier, ensemble_embedding_space, ensemble_probability_space, predict, subsample_prompts,
    truncate_prompts, ClassifierError, Scorer, SourceSet,
};
pub use corpus::{load_corpus, save_corpus, CorpusError, CORPUS_FORMAT_VERSION};
pub use domain::{
    ClassifierConfig, DomainError, EmbeddingVector, EnsembleStrategy, LlmQuery, MetaGenConfig, PredictionResult,
    PromptCorpus, QueryTemplate, TaskSpec, Validate, VlmPrompt, ZeroShotClassifier,
};
pub use embedding::{EmbedError, EmbeddingBackend};
pub use eval::{evaluate, EvalError, EvalReport, LabeledSplit};
pub use factory::{generate_corpus, generate_templates, FactoryError, GenerationSettings};
pub use llm::{ChatRequest, LlmBackend, LlmError, LlmResponse};
pub use meta_prompt::{compose_meta_prompt, InContextExample, MetaPromptOptions};
pub use templates::{extract_templates, serialize_templates, ParseReport};
