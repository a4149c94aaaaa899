use super::{predict, unit_or_degenerate, ClassifierError};
use crate::domain::{EmbeddingVector, PredictionResult, ZeroShotClassifier};

/// Classifiers from different text sources over the same classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSet {
    sources: Vec<(String, ZeroShotClassifier)>,
}

impl SourceSet {
    pub fn new(sources: Vec<(String, ZeroShotClassifier)>) -> Result<Self, ClassifierError> {
        let Some((_, first)) = sources.first() else {
            return Err(ClassifierError::InvalidSourceSet("no sources".into()));
        };
        for (tag, clf) in &sources[1..] {
            if clf.class_labels != first.class_labels {
                return Err(ClassifierError::InvalidSourceSet(format!(
                    "source {tag:?} has a different class order"
                )));
            }
            if clf.dim != first.dim {
                return Err(ClassifierError::DimensionMismatch {
                    expected: first.dim,
                    found: clf.dim,
                });
            }
        }
        Ok(Self { sources })
    }

    /// Tags each classifier with its own `source_tag`.
    pub fn from_classifiers(classifiers: Vec<ZeroShotClassifier>) -> Result<Self, ClassifierError> {
        Self::new(classifiers.into_iter().map(|c| (c.source_tag.clone(), c)).collect())
    }

    pub fn sources(&self) -> &[(String, ZeroShotClassifier)] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn class_labels(&self) -> &[String] {
        &self.sources[0].1.class_labels
    }

    pub fn tags(&self) -> Vec<String> {
        self.sources.iter().map(|(t, _)| t.clone()).collect()
    }
}

/// Mean of equal-length rows, written as `r0 + Σ (r_s - r0) / S` so that
/// identical rows reproduce `r0` bit for bit.
pub(crate) fn anchored_mean<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]> + Clone) -> Vec<f64> {
    let s = rows.len() as f64;
    let mut it = rows.clone();
    let first = it.next().expect("at least one row");
    let mut delta = vec![0.0; first.len()];
    for row in it {
        for ((d, x), x0) in delta.iter_mut().zip(row).zip(first) {
            *d += x - x0;
        }
    }
    first.iter().zip(delta).map(|(x0, d)| x0 + d / s).collect()
}

/// Per class, the renormalized mean of the sources' class embeddings.
pub fn ensemble_embedding_space(sources: &SourceSet) -> Result<ZeroShotClassifier, ClassifierError> {
    let first = &sources.sources[0].1;
    let mut class_embeddings = Vec::with_capacity(first.class_labels.len());
    for (i, label) in first.class_labels.iter().enumerate() {
        let rows = sources.sources.iter().map(|(_, c)| c.class_embeddings[i].values.as_slice());
        let mean = anchored_mean(rows);
        let t = if mean == first.class_embeddings[i].values {
            first.class_embeddings[i].clone()
        } else {
            unit_or_degenerate(EmbeddingVector::new(mean), label)?
        };
        class_embeddings.push(t);
    }
    Ok(ZeroShotClassifier {
        class_labels: first.class_labels.clone(),
        class_embeddings,
        dim: first.dim,
        source_tag: sources.tags().join("+"),
    })
}

/// Mean of the per-source softmax outputs at a shared temperature.
pub fn ensemble_probability_space(
    sources: &SourceSet,
    x: &EmbeddingVector,
    tau: f64,
) -> Result<PredictionResult, ClassifierError> {
    let per_source = sources
        .sources
        .iter()
        .map(|(_, c)| predict(x, c, tau).map(|p| p.probabilities))
        .collect::<Result<Vec<_>, _>>()?;
    let probabilities = anchored_mean(per_source.iter().map(Vec::as_slice));
    Ok(PredictionResult::from_probabilities(probabilities, sources.class_labels()))
}
