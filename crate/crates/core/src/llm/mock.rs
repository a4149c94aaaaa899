use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::{ChatRequest, LlmBackend, LlmError, LlmResponse};
use crate::fsutil::write_atomic;

/// Answers each request with `<dir>/<request-hash>.txt`, verbatim.
#[derive(Debug, Clone)]
pub struct MockBackend {
    dir: PathBuf,
}

impl MockBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn fixture_path(&self, req: &ChatRequest) -> PathBuf {
        fixture_path(&self.dir, req)
    }
}

fn fixture_path(dir: &Path, req: &ChatRequest) -> PathBuf {
    dir.join(format!("{}.txt", req.request_hash()))
}

impl LlmBackend for MockBackend {
    fn complete(&self, req: &ChatRequest) -> Result<LlmResponse, LlmError> {
        let path = self.fixture_path(req);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(LlmResponse::stop(text, req.model.clone())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(LlmError::MockFixtureMissing {
                hash: req.request_hash(),
            }),
            Err(e) => Err(LlmError::Io(format!("{}: {e}", path.display()))),
        }
    }
}

/// Stores `text` as the mock fixture for `req` under `dir`.
pub fn write_fixture(dir: &Path, req: &ChatRequest, text: &str) -> io::Result<PathBuf> {
    let path = fixture_path(dir, req);
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Forwards to an inner backend and saves every successful answer as a mock
/// fixture, turning a live or synthetic session into a replayable fixture set.
pub struct FixtureRecorder<B> {
    inner: B,
    dir: PathBuf,
}

impl<B> FixtureRecorder<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
        }
    }
}

impl<B: LlmBackend> LlmBackend for FixtureRecorder<B> {
    fn complete(&self, req: &ChatRequest) -> Result<LlmResponse, LlmError> {
        let resp = self.inner.complete(req)?;
        write_fixture(&self.dir, req, &resp.text).map_err(|e| LlmError::Io(e.to_string()))?;
        Ok(resp)
    }
}
