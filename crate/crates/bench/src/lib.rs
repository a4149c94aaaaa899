//! Inputs shared by the benchmarks: synthetic corpora sized like real runs.

use mpvr_core::embedding::{SyntheticBackendConfig, SyntheticEmbedder};
use mpvr_core::{build_classifier, MetaGenConfig, PromptCorpus, VlmPrompt, ZeroShotClassifier};

const WORDS: &[&str] = &[
    "a", "satellite", "photo", "of", "green", "fields", "seen", "from", "above", "with", "winding", "roads",
    "and", "scattered", "trees", "under", "bright", "light",
];

pub fn embedder(dim: usize) -> SyntheticEmbedder {
    SyntheticEmbedder::new(SyntheticBackendConfig { dim, seed: 1 }).expect("valid dim")
}

pub fn class_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("class {i}")).collect()
}

/// `per_class` descriptions of roughly `words` tokens for each class, each
/// mentioning its class label once.
pub fn corpus(n_classes: usize, per_class: usize, words: usize) -> PromptCorpus {
    let entries = class_labels(n_classes)
        .into_iter()
        .map(|label| {
            let prompts = (0..per_class)
                .map(|p| {
                    let mut tokens: Vec<&str> = (0..words).map(|k| WORDS[(p * 7 + k * 3) % WORDS.len()]).collect();
                    tokens.insert((p % words.max(1)).min(tokens.len()), &label);
                    VlmPrompt::new(&tokens.join(" "), label.clone(), format!("t{}", p / 10), "bench")
                })
                .collect();
            (label, prompts)
        })
        .collect();
    PromptCorpus {
        dataset_name: "bench".into(),
        llm_id: "bench".into(),
        entries,
        generation_config: MetaGenConfig::default(),
    }
}

pub fn classifier(n_classes: usize, per_class: usize, dim: usize) -> ZeroShotClassifier {
    let c = corpus(n_classes, per_class, 12);
    build_classifier(&c.texts(), &embedder(dim), &class_labels(n_classes), "bench").expect("classifier")
}

/// A stage-1 style answer with `n` templates inside a fenced list.
pub fn template_response(n: usize) -> String {
    let body: Vec<String> = (0..n)
        .map(|i| format!("    \"Describe how a {{}} looks in aerial image number {i}, including 'its' textures.\""))
        .collect();
    format!("Here are the queries:\n```python\n[\n{}\n]\n```\nLet me know if you need more.", body.join(",\n"))
}
