use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_inputs, to_unit, EmbedError, EmbeddingBackend};
use crate::domain::EmbeddingVector;
use crate::fsutil::write_atomic;
use crate::hash::canonical_json;

pub const INDEX_FILE: &str = "index.json";
pub const PAYLOAD_FILE: &str = "embeddings.f32";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingStoreHeader {
    pub dim: usize,
    pub count: usize,
    pub keys: Vec<String>,
    pub model_id: String,
}

/// Precomputed embeddings: a JSON index plus little-endian f32 rows,
/// row `i` belonging to `keys[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub header: EmbeddingStoreHeader,
    pub rows: Vec<f32>,
}

impl EmbeddingStore {
    pub fn from_rows(
        model_id: impl Into<String>,
        entries: Vec<(String, Vec<f32>)>,
    ) -> Result<Self, EmbedError> {
        let dim = entries.first().map_or(0, |(_, r)| r.len());
        if dim == 0 {
            return Err(EmbedError::EmptyInput("store needs rows of positive dim".into()));
        }
        let mut keys = Vec::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len() * dim);
        for (key, row) in entries {
            if row.len() != dim {
                return Err(EmbedError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            keys.push(key);
            rows.extend(row);
        }
        let store = Self {
            header: EmbeddingStoreHeader {
                dim,
                count: keys.len(),
                keys,
                model_id: model_id.into(),
            },
            rows,
        };
        store.check_keys()?;
        Ok(store)
    }

    fn check_keys(&self) -> Result<(), EmbedError> {
        let mut seen = std::collections::HashSet::new();
        for k in &self.header.keys {
            if !seen.insert(k) {
                return Err(EmbedError::Io(format!("duplicate key {k:?} in store")));
            }
        }
        if self.header.keys.len() != self.header.count {
            return Err(EmbedError::Io(format!(
                "header lists {} keys but count is {}",
                self.header.keys.len(),
                self.header.count
            )));
        }
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let dim = self.header.dim;
        &self.rows[i * dim..(i + 1) * dim]
    }

    pub fn save(&self, dir: &Path) -> Result<(), EmbedError> {
        let io = |e: std::io::Error| EmbedError::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        let mut payload = Vec::with_capacity(self.rows.len() * 4);
        for v in &self.rows {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        write_atomic(&dir.join(PAYLOAD_FILE), &payload).map_err(io)?;
        let index = canonical_json(&self.header).map_err(|e| EmbedError::Io(e.to_string()))?;
        write_atomic(&dir.join(INDEX_FILE), index.as_bytes()).map_err(io)
    }

    pub fn load(dir: &Path) -> Result<Self, EmbedError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read(&path).map_err(|e| EmbedError::Io(format!("{}: {e}", path.display())))
        };
        let header: EmbeddingStoreHeader = serde_json::from_slice(&read(INDEX_FILE)?)
            .map_err(|e| EmbedError::Io(format!("{INDEX_FILE}: {e}")))?;
        let payload = read(PAYLOAD_FILE)?;
        let expected = header.dim * header.count * 4;
        if header.dim == 0 || payload.len() != expected {
            return Err(EmbedError::DimensionMismatch {
                expected,
                found: payload.len(),
            });
        }
        let rows = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let store = Self { header, rows };
        store.check_keys()?;
        Ok(store)
    }
}

/// Serves embeddings from an [`EmbeddingStore`]; texts and image refs are
/// both looked up by exact key.
#[derive(Debug, Clone)]
pub struct StoreBackend {
    store: EmbeddingStore,
    index: HashMap<String, usize>,
}

impl StoreBackend {
    pub fn new(store: EmbeddingStore) -> Self {
        let index = store
            .header
            .keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        Self { store, index }
    }

    pub fn open(dir: &Path) -> Result<Self, EmbedError> {
        Ok(Self::new(EmbeddingStore::load(dir)?))
    }

    /// Merges several stores; later stores win on key collisions.
    pub fn merged(stores: Vec<EmbeddingStore>) -> Result<Self, EmbedError> {
        let mut entries: Vec<(String, Vec<f32>)> = Vec::new();
        let mut position: HashMap<String, usize> = HashMap::new();
        let mut model_id = String::new();
        for store in stores {
            model_id = store.header.model_id.clone();
            for (i, key) in store.header.keys.iter().enumerate() {
                let row = store.row(i).to_vec();
                match position.get(key) {
                    Some(&p) => entries[p].1 = row,
                    None => {
                        position.insert(key.clone(), entries.len());
                        entries.push((key.clone(), row));
                    }
                }
            }
        }
        Ok(Self::new(EmbeddingStore::from_rows(model_id, entries)?))
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn dim(&self) -> usize {
        self.store.header.dim
    }

    fn lookup(&self, key: &str) -> Result<EmbeddingVector, EmbedError> {
        let i = *self
            .index
            .get(key)
            .ok_or_else(|| EmbedError::UnknownKey(key.to_string()))?;
        to_unit(self.store.row(i).iter().map(|&v| f64::from(v)), key)
    }
}

impl EmbeddingBackend for StoreBackend {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        check_inputs(texts)?;
        texts.iter().map(|t| self.lookup(t)).collect()
    }

    fn embed_image(&self, image_ref: &str) -> Result<EmbeddingVector, EmbedError> {
        if image_ref.is_empty() {
            return Err(EmbedError::EmptyInput("image ref is empty".into()));
        }
        self.lookup(image_ref)
    }

    fn model_id(&self) -> String {
        self.store.header.model_id.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingStore {
        EmbeddingStore::from_rows(
            "test-model",
            vec![
                ("a".into(), vec![1.0, 0.0, 0.0, 0.0]),
                ("b".into(), vec![0.0, 0.6, 0.8, 0.0]),
                ("c".into(), vec![0.1f32, 0.2, 0.3, 0.4]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn payload_size_and_bitwise_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = sample();
        store.save(dir.path()).unwrap();
        assert_eq!(fs::metadata(dir.path().join(PAYLOAD_FILE)).unwrap().len(), 48);
        let back = EmbeddingStore::load(dir.path()).unwrap();
        assert_eq!(back.header, store.header);
        let bits = |s: &EmbeddingStore| s.rows.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&store));
    }

    #[test]
    fn truncated_payload_is_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let path = dir.path().join(PAYLOAD_FILE);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..44]).unwrap();
        assert_eq!(
            EmbeddingStore::load(dir.path()).unwrap_err(),
            EmbedError::DimensionMismatch {
                expected: 48,
                found: 44
            }
        );
    }

    #[test]
    fn unit_rows_come_back_as_exact_f32_values() {
        let backend = StoreBackend::new(sample());
        let b = backend.embed_image("b").unwrap();
        assert_eq!(b.values, vec![0.0, f64::from(0.6f32), f64::from(0.8f32), 0.0]);
        let c = backend.embed_image("c").unwrap();
        assert!(c.is_unit());
    }

    #[test]
    fn unknown_key_is_named() {
        let backend = StoreBackend::new(sample());
        let err = backend.embed_texts(&["a".into(), "zzz".into()]).unwrap_err();
        assert_eq!(err, EmbedError::UnknownKey("zzz".into()));
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = EmbeddingStore::from_rows("m", vec![("a".into(), vec![1.0]), ("b".into(), vec![1.0, 0.0])]);
        assert!(matches!(err, Err(EmbedError::DimensionMismatch { .. })));
    }
}
