use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{unit_or_degenerate, ClassifierError};
use crate::domain::{EmbeddingVector, Validate, ZeroShotClassifier};
use crate::embedding::EmbeddingStore;
use crate::fsutil::write_atomic;
use crate::hash::canonical_json;

pub const CLASSIFIER_FILE: &str = "classifier.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHeader {
    pub class_order: Vec<String>,
    pub dim: usize,
    pub source_tag: String,
    pub temperature: f64,
}

/// Writes `classifier.json` plus the class rows as an embedding store keyed
/// by class label.
pub fn save_classifier(clf: &ZeroShotClassifier, temperature: f64, dir: &Path) -> Result<(), ClassifierError> {
    clf.check()?;
    let rows = clf
        .class_labels
        .iter()
        .zip(&clf.class_embeddings)
        .map(|(label, t)| (label.clone(), t.values.iter().map(|&v| v as f32).collect()))
        .collect();
    EmbeddingStore::from_rows(clf.source_tag.clone(), rows)?.save(dir)?;
    let header = ClassifierHeader {
        class_order: clf.class_labels.clone(),
        dim: clf.dim,
        source_tag: clf.source_tag.clone(),
        temperature,
    };
    let text = canonical_json(&header).map_err(|e| ClassifierError::Io(e.to_string()))?;
    write_atomic(&dir.join(CLASSIFIER_FILE), text.as_bytes())
        .map_err(|e| ClassifierError::Io(format!("{}: {e}", dir.display())))
}

pub fn load_classifier(dir: &Path) -> Result<(ZeroShotClassifier, ClassifierHeader), ClassifierError> {
    let path = dir.join(CLASSIFIER_FILE);
    let text = fs::read_to_string(&path).map_err(|e| ClassifierError::Io(format!("{}: {e}", path.display())))?;
    let header: ClassifierHeader =
        serde_json::from_str(&text).map_err(|e| ClassifierError::Io(format!("{}: {e}", path.display())))?;
    let store = EmbeddingStore::load(dir)?;
    if store.header.dim != header.dim {
        return Err(ClassifierError::DimensionMismatch {
            expected: header.dim,
            found: store.header.dim,
        });
    }
    if store.header.keys != header.class_order {
        return Err(ClassifierError::Io("row keys do not match class_order".into()));
    }
    let class_embeddings = header
        .class_order
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let v = EmbeddingVector::new(store.row(i).iter().map(|&x| f64::from(x)).collect());
            if v.is_unit() {
                Ok(v)
            } else {
                unit_or_degenerate(v, label)
            }
        })
        .collect::<Result<_, _>>()?;
    let clf = ZeroShotClassifier {
        class_labels: header.class_order.clone(),
        class_embeddings,
        dim: header.dim,
        source_tag: header.source_tag.clone(),
    };
    Ok((clf, header))
}
