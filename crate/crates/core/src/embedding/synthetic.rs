use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_inputs, to_unit, EmbedError, EmbeddingBackend};
use crate::domain::EmbeddingVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticBackendConfig {
    pub dim: usize,
    pub seed: u64,
}

/// Hash-derived embeddings: SHA-256(seed ‖ text) seeds a counter-mode
/// SHA-256 stream whose 32-bit words map to [-1, 1), then the vector is
/// normalized. Texts and image refs share one mapping.
#[derive(Debug, Clone)]
pub struct SyntheticEmbedder {
    config: SyntheticBackendConfig,
}

impl SyntheticEmbedder {
    pub fn new(config: SyntheticBackendConfig) -> Result<Self, EmbedError> {
        if config.dim < 2 {
            return Err(EmbedError::Config(format!(
                "synthetic dim must be >= 2, got {}",
                config.dim
            )));
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> SyntheticBackendConfig {
        self.config
    }

    fn raw(&self, input: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.config.seed.to_le_bytes());
        h.update(input.as_bytes());
        let root = h.finalize();

        let mut values = Vec::with_capacity(self.config.dim);
        let mut block: u64 = 0;
        while values.len() < self.config.dim {
            let mut h = Sha256::new();
            h.update(root.as_slice());
            h.update(block.to_le_bytes());
            let digest = h.finalize();
            for word in digest.chunks_exact(4) {
                if values.len() == self.config.dim {
                    break;
                }
                let w = u32::from_le_bytes([word[0], word[1], word[2], word[3]]);
                values.push(f64::from(w) / 2_147_483_648.0 - 1.0);
            }
            block += 1;
        }
        values
    }

    fn embed_one(&self, input: &str) -> Result<EmbeddingVector, EmbedError> {
        to_unit(self.raw(input), input)
    }
}

impl EmbeddingBackend for SyntheticEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        check_inputs(texts)?;
        texts.iter().map(|t| self.embed_one(t)).collect()
    }

    fn embed_image(&self, image_ref: &str) -> Result<EmbeddingVector, EmbedError> {
        if image_ref.is_empty() {
            return Err(EmbedError::EmptyInput("image ref is empty".into()));
        }
        self.embed_one(image_ref)
    }

    fn model_id(&self) -> String {
        format!("synthetic-d{}-s{}", self.config.dim, self.config.seed)
    }
}
