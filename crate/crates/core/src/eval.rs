//! Top-1 evaluation over labeled image embeddings, plus the repeated-run
//! protocols (robustness, scaling, truncation) built on top of it.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    anchored_mean, build_classifier, subsample_prompts, truncate_prompts, ClassifierError, Scorer,
};
use crate::corpus::{corpus_hash, CorpusError};
use crate::domain::{
    ClassifierConfig, DomainError, EmbeddingVector, EnsembleStrategy, MetaGenConfig, PromptCorpus,
    Validate,
};
use crate::embedding::{EmbedError, EmbeddingBackend};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("class order mismatch: split has {split:?}, classifier has {classifier:?}")]
    ClassOrderMismatch {
        split: Vec<String>,
        classifier: Vec<String>,
    },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Invalid(#[from] DomainError),
    #[error("{0}")]
    Corpus(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0}")]
    Io(String),
}

impl From<CorpusError> for EvalError {
    fn from(e: CorpusError) -> Self {
        EvalError::Corpus(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitItem {
    pub key: String,
    pub label_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSplit {
    pub class_order: Vec<String>,
    pub items: Vec<SplitItem>,
}

impl Validate for LabeledSplit {
    const NAME: &'static str = "LabeledSplit";

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.class_order.is_empty() {
            out.push("class_order is empty".to_string());
        }
        if self.items.is_empty() {
            out.push("items is empty".to_string());
        }
        for (i, item) in self.items.iter().enumerate() {
            if item.label_index >= self.class_order.len() {
                out.push(format!(
                    "item {i} ({:?}) has label_index {} but there are {} classes",
                    item.key,
                    item.label_index,
                    self.class_order.len()
                ));
            }
        }
        out
    }
}

impl LabeledSplit {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        let split: Self =
            serde_json::from_str(&text).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        Ok(split.validated()?)
    }

    /// `splits/<dataset>/<split_id>.json`
    pub fn path(root: &Path, dataset: &str, split_id: &str) -> PathBuf {
        root.join(dataset.to_lowercase()).join(format!("{split_id}.json"))
    }
}

/// Where a classifier's prompts came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_tag: String,
    pub corpus_hash: String,
    pub llm_id: String,
    pub generation_config: MetaGenConfig,
}

impl Provenance {
    pub fn of(corpus: &PromptCorpus, source_tag: &str) -> Result<Self, EvalError> {
        Ok(Self {
            source_tag: source_tag.to_string(),
            corpus_hash: corpus_hash(corpus)?,
            llm_id: corpus.llm_id.clone(),
            generation_config: corpus.generation_config,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub source_tags: Vec<String>,
    /// Absent for a single source.
    pub strategy: Option<EnsembleStrategy>,
    pub temperature: f64,
    pub embedding_model: String,
    pub n_items: usize,
    pub n_correct: usize,
    pub top1_accuracy: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_run_accuracies: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_accuracy: Option<f64>,
    pub provenance: Vec<Provenance>,
}

/// Embeds every image of the split, in parallel, in split order.
pub fn embed_split<B: EmbeddingBackend + ?Sized>(
    split: &LabeledSplit,
    backend: &B,
) -> Result<Vec<EmbeddingVector>, EvalError> {
    split.check()?;
    Ok(split
        .items
        .par_iter()
        .map(|item| backend.embed_image(&item.key))
        .collect::<Result<Vec<_>, _>>()?)
}

/// Number of items whose argmax equals the true index.
pub fn count_correct(
    scorer: &Scorer,
    images: &[EmbeddingVector],
    split: &LabeledSplit,
    cfg: &ClassifierConfig,
) -> Result<usize, EvalError> {
    if scorer.class_labels() != split.class_order.as_slice() {
        return Err(EvalError::ClassOrderMismatch {
            split: split.class_order.clone(),
            classifier: scorer.class_labels().to_vec(),
        });
    }
    if images.len() != split.items.len() {
        return Err(EvalError::InvalidArgument(format!(
            "{} embeddings for {} items",
            images.len(),
            split.items.len()
        )));
    }
    let hits = images
        .par_iter()
        .zip(&split.items)
        .map(|(x, item)| scorer.predict(x, cfg).map(|p| usize::from(p.argmax_index == item.label_index)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(hits.into_iter().sum())
}

fn accuracy(n_correct: usize, n: usize) -> f64 {
    n_correct as f64 / n as f64
}

fn report(
    dataset: &str,
    scorer: &Scorer,
    backend_model: String,
    cfg: &ClassifierConfig,
    n_items: usize,
    n_correct: usize,
    provenance: Vec<Provenance>,
) -> EvalReport {
    EvalReport {
        dataset: dataset.to_string(),
        source_tags: scorer.source_tags(),
        strategy: scorer.strategy(),
        temperature: cfg.temperature,
        embedding_model: backend_model,
        n_items,
        n_correct,
        top1_accuracy: accuracy(n_correct, n_items),
        seeds: Vec::new(),
        per_run_accuracies: Vec::new(),
        std_accuracy: None,
        provenance,
    }
}

pub fn evaluate<B: EmbeddingBackend + ?Sized>(
    dataset: &str,
    scorer: &Scorer,
    split: &LabeledSplit,
    backend: &B,
    cfg: &ClassifierConfig,
    provenance: Vec<Provenance>,
) -> Result<EvalReport, EvalError> {
    cfg.check()?;
    let images = embed_split(split, backend)?;
    let n_correct = count_correct(scorer, &images, split, cfg)?;
    Ok(report(dataset, scorer, backend.model_id(), cfg, split.items.len(), n_correct, provenance))
}

/// Builds a single-source classifier from a corpus and evaluates it.
pub fn evaluate_corpus<B: EmbeddingBackend + ?Sized>(
    corpus: &PromptCorpus,
    split: &LabeledSplit,
    backend: &B,
    cfg: &ClassifierConfig,
) -> Result<EvalReport, EvalError> {
    let clf = build_classifier(&corpus.texts(), backend, &split.class_order, &corpus.llm_id)?;
    let provenance = vec![Provenance::of(corpus, &corpus.llm_id)?];
    evaluate(&corpus.dataset_name, &Scorer::Single(clf), split, backend, cfg, provenance)
}

/// Sample mean and sample standard deviation. Identical values give a
/// standard deviation of exactly zero.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let mean = anchored_mean(values.iter().map(std::slice::from_ref));
    let mean = mean[0];
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (values.len() - 1) as f64).sqrt())
}

/// Evaluates `corpus` transformed by `transform(corpus, seed)` for each seed.
fn repeated_runs<B, F>(
    corpus: &PromptCorpus,
    split: &LabeledSplit,
    backend: &B,
    cfg: &ClassifierConfig,
    seeds: Vec<u64>,
    transform: F,
) -> Result<EvalReport, EvalError>
where
    B: EmbeddingBackend + ?Sized,
    F: Fn(&PromptCorpus, u64) -> Result<PromptCorpus, EvalError>,
{
    cfg.check()?;
    let images = embed_split(split, backend)?;
    let mut runs = Vec::with_capacity(seeds.len());
    let mut total_correct = 0;
    let mut last = None;
    for &seed in &seeds {
        let sub = transform(corpus, seed)?;
        let clf = build_classifier(&sub.texts(), backend, &split.class_order, &corpus.llm_id)?;
        let scorer = Scorer::Single(clf);
        let n_correct = count_correct(&scorer, &images, split, cfg)?;
        total_correct += n_correct;
        runs.push(accuracy(n_correct, split.items.len()));
        last = Some(scorer);
    }
    let scorer = last.ok_or_else(|| EvalError::InvalidArgument("no runs".into()))?;
    let (mean, std) = mean_and_std(&runs);
    let mut out = report(
        &corpus.dataset_name,
        &scorer,
        backend.model_id(),
        cfg,
        split.items.len(),
        total_correct,
        vec![Provenance::of(corpus, &corpus.llm_id)?],
    );
    out.n_correct = total_correct;
    out.top1_accuracy = mean;
    out.seeds = seeds;
    out.per_run_accuracies = runs;
    out.std_accuracy = Some(std);
    Ok(out)
}

/// `n_runs` classifiers from seeded subsamples (seeds `base_seed + i`).
/// `top1_accuracy` holds the mean and `n_correct` the total over runs.
pub fn robustness_run<B: EmbeddingBackend + ?Sized>(
    corpus: &PromptCorpus,
    split: &LabeledSplit,
    backend: &B,
    cfg: &ClassifierConfig,
    n_runs: usize,
    fraction: f64,
    base_seed: u64,
) -> Result<EvalReport, EvalError> {
    if n_runs < 2 {
        return Err(EvalError::InvalidArgument(format!("n_runs must be >= 2, got {n_runs}")));
    }
    let seeds = (0..n_runs as u64).map(|i| base_seed.wrapping_add(i)).collect();
    repeated_runs(corpus, split, backend, cfg, seeds, |c, seed| {
        Ok(subsample_prompts(c, fraction, seed)?)
    })
}

/// Averages over seeded truncations of the corpus.
pub fn truncation_run<B: EmbeddingBackend + ?Sized>(
    corpus: &PromptCorpus,
    split: &LabeledSplit,
    backend: &B,
    cfg: &ClassifierConfig,
    n_runs: usize,
    base_seed: u64,
) -> Result<EvalReport, EvalError> {
    if n_runs == 0 {
        return Err(EvalError::InvalidArgument("n_runs must be >= 1".into()));
    }
    let seeds = (0..n_runs as u64).map(|i| base_seed.wrapping_add(i)).collect();
    repeated_runs(corpus, split, backend, cfg, seeds, |c, seed| Ok(truncate_prompts(c, seed)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub prompts_per_class: f64,
    pub accuracy: f64,
}

/// One seeded subsample and evaluation per fraction.
pub fn scaling_curve<B: EmbeddingBackend + ?Sized>(
    corpus: &PromptCorpus,
    split: &LabeledSplit,
    backend: &B,
    cfg: &ClassifierConfig,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<CurvePoint>, EvalError> {
    if fractions.is_empty() || fractions.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::InvalidArgument("fractions must be non-empty and sorted".into()));
    }
    cfg.check()?;
    let images = embed_split(split, backend)?;
    fractions
        .iter()
        .map(|&fraction| {
            let sub = subsample_prompts(corpus, fraction, seed)?;
            let clf = build_classifier(&sub.texts(), backend, &split.class_order, &corpus.llm_id)?;
            let n_correct = count_correct(&Scorer::Single(clf), &images, split, cfg)?;
            let classes = sub.entries.len().max(1) as f64;
            Ok(CurvePoint {
                fraction,
                prompts_per_class: sub.n_prompts() as f64 / classes,
                accuracy: accuracy(n_correct, split.items.len()),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::SourceSet;
    use crate::domain::{VlmPrompt, ZeroShotClassifier};
    use crate::embedding::{EmbeddingStore, StoreBackend};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn split(keys_and_labels: &[(&str, usize)], n_classes: usize) -> LabeledSplit {
        LabeledSplit {
            class_order: labels(n_classes),
            items: keys_and_labels
                .iter()
                .map(|(k, l)| SplitItem {
                    key: k.to_string(),
                    label_index: *l,
                })
                .collect(),
        }
    }

    fn axis_clf(n: usize) -> ZeroShotClassifier {
        ZeroShotClassifier {
            class_labels: labels(n),
            class_embeddings: (0..n)
                .map(|i| {
                    let mut v = vec![0.0; n];
                    v[i] = 1.0;
                    EmbeddingVector::new(v)
                })
                .collect(),
            dim: n,
            source_tag: "axis".into(),
        }
    }

    fn images() -> StoreBackend {
        StoreBackend::new(
            EmbeddingStore::from_rows(
                "imgs",
                vec![
                    ("i0".into(), vec![1.0, 0.0]),
                    ("i1".into(), vec![0.0, 1.0]),
                    ("i2".into(), vec![0.0, 1.0]),
                ],
            )
            .unwrap(),
        )
    }

    #[test]
    fn two_of_three() {
        let s = split(&[("i0", 0), ("i1", 1), ("i2", 0)], 2);
        let r = evaluate("d", &Scorer::Single(axis_clf(2)), &s, &images(), &ClassifierConfig::default(), vec![])
            .unwrap();
        assert_eq!((r.n_correct, r.n_items), (2, 3));
        assert_eq!(r.top1_accuracy, 2.0 / 3.0);
    }

    #[test]
    fn identical_classes_pick_index_zero() {
        let mut c = axis_clf(2);
        c.class_embeddings[1] = c.class_embeddings[0].clone();
        let s = split(&[("i0", 0), ("i1", 1), ("i2", 0)], 2);
        let r = evaluate("d", &Scorer::Single(c), &s, &images(), &ClassifierConfig::default(), vec![]).unwrap();
        assert_eq!(r.top1_accuracy, 2.0 / 3.0);
    }

    #[test]
    fn class_order_must_match() {
        let mut c = axis_clf(2);
        c.class_labels.reverse();
        let s = split(&[("i0", 0)], 2);
        let err = evaluate("d", &Scorer::Single(c), &s, &images(), &ClassifierConfig::default(), vec![]);
        assert!(matches!(err, Err(EvalError::ClassOrderMismatch { .. })));
    }

    #[test]
    fn probability_ensemble_scores() {
        let sources = SourceSet::from_classifiers(vec![axis_clf(2), axis_clf(2)]).unwrap();
        let scorer = Scorer::from_sources(sources, EnsembleStrategy::ProbabilitySpace).unwrap();
        let s = split(&[("i0", 0), ("i1", 1)], 2);
        let r = evaluate("d", &scorer, &s, &images(), &ClassifierConfig::default(), vec![]).unwrap();
        assert_eq!(r.top1_accuracy, 1.0);
        assert_eq!(r.strategy, Some(EnsembleStrategy::ProbabilitySpace));
    }

    #[test]
    fn split_validation() {
        let bad = split(&[("i0", 5)], 2);
        assert!(!bad.is_valid());
        assert!(!split(&[], 2).is_valid());
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_and_std(&[0.5, 0.5, 0.5]);
        assert_eq!((m, s), (0.5, 0.0));
        let (m, s) = mean_and_std(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    /// Classes on the first axes of a 12-dim space; each prompt is its class
    /// axis plus heavy Gaussian-like noise, so averaging more prompts helps.
    /// Images are their class axis plus light noise.
    fn noisy_fixture() -> (PromptCorpus, LabeledSplit, StoreBackend) {
        const DIM: usize = 12;
        const CLASSES: usize = 6;
        const PROMPTS: usize = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut noise = |scale: f64| -> Vec<f64> {
            (0..DIM)
                .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).sum::<f64>() * scale)
                .collect()
        };
        let mut rows = Vec::new();
        let mut entries = BTreeMap::new();
        let mut items = Vec::new();
        for c in 0..CLASSES {
            let mut prompts = Vec::new();
            for p in 0..PROMPTS {
                let key = format!("c{c} prompt {p}");
                let mut v = noise(0.9);
                v[c] += 1.0;
                rows.push((key.clone(), v.iter().map(|&x| x as f32).collect()));
                prompts.push(VlmPrompt::new(&key, format!("c{c}"), "t", "synthetic"));
            }
            entries.insert(format!("c{c}"), prompts);
            for i in 0..30 {
                let key = format!("img {c}/{i}");
                let mut v = noise(0.25);
                v[c] += 1.0;
                rows.push((key.clone(), v.iter().map(|&x| x as f32).collect()));
                items.push(SplitItem { key, label_index: c });
            }
        }
        let corpus = PromptCorpus {
            dataset_name: "noisy".into(),
            llm_id: "synthetic".into(),
            entries,
            generation_config: MetaGenConfig::default(),
        };
        let split = LabeledSplit {
            class_order: labels(CLASSES),
            items,
        };
        let backend = StoreBackend::new(EmbeddingStore::from_rows("fixture", rows).unwrap());
        (corpus, split, backend)
    }

    /// Independent accuracy: embeds, averages and compares by hand.
    fn oracle_accuracy(corpus: &PromptCorpus, split: &LabeledSplit, backend: &StoreBackend) -> f64 {
        let unit = |v: Vec<f64>| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<_>>()
        };
        let class_vecs: Vec<Vec<f64>> = split
            .class_order
            .iter()
            .map(|c| {
                let vs = backend.embed_texts(&corpus.texts()[c]).unwrap();
                let mut sum = vec![0.0; vs[0].dim()];
                for v in &vs {
                    for (s, x) in sum.iter_mut().zip(&v.values) {
                        *s += x;
                    }
                }
                unit(sum)
            })
            .collect();
        let mut correct = 0;
        for item in &split.items {
            let x = backend.embed_image(&item.key).unwrap();
            let scores: Vec<f64> = class_vecs
                .iter()
                .map(|t| t.iter().zip(&x.values).map(|(a, b)| a * b).sum())
                .collect();
            let best = (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
            correct += usize::from(best == item.label_index);
        }
        correct as f64 / split.items.len() as f64
    }

    #[test]
    fn scaling_is_monotone_on_noisy_fixture() {
        let (corpus, split, backend) = noisy_fixture();
        let cfg = ClassifierConfig::default();
        let fractions = [0.025, 0.1, 0.25, 0.5, 1.0];
        let curve = scaling_curve(&corpus, &split, &backend, &cfg, &fractions, 11).unwrap();
        for (point, &f) in curve.iter().zip(&fractions) {
            let sub = subsample_prompts(&corpus, f, 11).unwrap();
            assert_eq!(point.accuracy, oracle_accuracy(&sub, &split, &backend));
        }
        let acc: Vec<f64> = curve.iter().map(|p| p.accuracy).collect();
        assert!(acc.windows(2).all(|w| w[0] <= w[1]), "{acc:?}");
        assert!(acc[0] < acc[acc.len() - 1], "{acc:?}");
    }

    #[test]
    fn full_fraction_curve_matches_evaluate() {
        let (corpus, split, backend) = noisy_fixture();
        let cfg = ClassifierConfig::default();
        let curve = scaling_curve(&corpus, &split, &backend, &cfg, &[1.0], 0).unwrap();
        let full = evaluate_corpus(&corpus, &split, &backend, &cfg).unwrap();
        assert_eq!(curve.len(), 1);
        assert_eq!(curve[0].accuracy, full.top1_accuracy);
        assert_eq!(full.provenance[0].corpus_hash, corpus_hash(&corpus).unwrap());
    }

    #[test]
    fn robustness_protocol() {
        let (corpus, split, backend) = noisy_fixture();
        let cfg = ClassifierConfig::default();
        let full = robustness_run(&corpus, &split, &backend, &cfg, 3, 1.0, 5).unwrap();
        assert_eq!(full.std_accuracy, Some(0.0));
        assert_eq!(full.seeds, vec![5, 6, 7]);
        let a = robustness_run(&corpus, &split, &backend, &cfg, 4, 0.25, 9).unwrap();
        let b = robustness_run(&corpus, &split, &backend, &cfg, 4, 0.25, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.per_run_accuracies.len(), 4);
        assert!(robustness_run(&corpus, &split, &backend, &cfg, 1, 0.5, 0).is_err());
    }

    #[test]
    fn report_serializes_exact_accuracy() {
        let s = split(&[("i0", 0), ("i1", 1), ("i2", 0)], 2);
        let r = evaluate("d", &Scorer::Single(axis_clf(2)), &s, &images(), &ClassifierConfig::default(), vec![])
            .unwrap();
        let back: EvalReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back.top1_accuracy, 2.0 / 3.0);
    }
}
