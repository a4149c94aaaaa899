use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ChatRequest, LlmBackend, LlmError, LlmResponse};
use crate::fsutil::write_atomic;
use crate::hash::canonical_json;

/// One cached exchange, stored as `<dir>/<request_hash>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub request_hash: String,
    pub request: ChatRequest,
    pub response: LlmResponse,
}

/// Append-only directory of request-hash → response records. A record is
/// never rewritten once present.
#[derive(Debug, Clone)]
pub struct ReplayCache {
    dir: PathBuf,
}

impl ReplayCache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    pub fn contains(&self, req: &ChatRequest) -> bool {
        self.path(&req.request_hash()).is_file()
    }

    pub fn get(&self, req: &ChatRequest) -> Result<Option<LlmResponse>, LlmError> {
        let hash = req.request_hash();
        let path = self.path(&hash);
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(LlmError::Io(format!("{}: {e}", path.display()))),
        };
        let record: ReplayRecord = serde_json::from_str(&text)
            .map_err(|e| LlmError::Io(format!("corrupt cache record {}: {e}", path.display())))?;
        if record.request_hash != hash {
            return Err(LlmError::Io(format!(
                "cache record {} carries hash {}",
                path.display(),
                record.request_hash
            )));
        }
        Ok(Some(record.response))
    }

    /// Stores the response unless a record already exists for the request.
    pub fn put(&self, req: &ChatRequest, response: &LlmResponse) -> Result<(), LlmError> {
        let hash = req.request_hash();
        let path = self.path(&hash);
        if path.exists() {
            return Ok(());
        }
        let record = ReplayRecord {
            request_hash: hash,
            request: req.clone(),
            response: response.clone(),
        };
        let text = canonical_json(&record).map_err(|e| LlmError::Io(e.to_string()))?;
        write_atomic(&path, text.as_bytes()).map_err(|e| LlmError::Io(e.to_string()))
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|entries| {
                entries
                    .filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cache-then-backend resolution. Misses are forwarded and recorded.
pub struct ReplayBackend<B> {
    inner: B,
    cache: ReplayCache,
}

impl<B> ReplayBackend<B> {
    pub fn new(inner: B, cache: ReplayCache) -> Self {
        Self { inner, cache }
    }

    pub fn cache(&self) -> &ReplayCache {
        &self.cache
    }
}

impl<B: LlmBackend> LlmBackend for ReplayBackend<B> {
    fn complete(&self, req: &ChatRequest) -> Result<LlmResponse, LlmError> {
        if let Some(hit) = self.cache.get(req)? {
            return Ok(hit);
        }
        let resp = self.inner.complete(req)?;
        self.cache.put(req, &resp)?;
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{CountingBackend, SyntheticLlm};

    #[test]
    fn primed_replay_serves_without_backend_calls() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::open(dir.path()).unwrap();
        let counter = CountingBackend::new(SyntheticLlm::new("m"));
        let replay = ReplayBackend::new(&counter, cache.clone());
        let req = ChatRequest::user("m", "Tell me about a {} forest", 50, 0.7);

        let first = replay.complete(&req).unwrap();
        assert_eq!(counter.calls(), 1);
        let second = replay.complete(&req).unwrap();
        assert_eq!(counter.calls(), 1);
        assert_eq!(first.text, second.text);
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn put_is_append_only() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::open(dir.path()).unwrap();
        let req = ChatRequest::user("m", "q", 5, 0.0);
        cache.put(&req, &LlmResponse::stop("first", "m")).unwrap();
        cache.put(&req, &LlmResponse::stop("second", "m")).unwrap();
        assert_eq!(cache.get(&req).unwrap().unwrap().text, "first");
    }
}
