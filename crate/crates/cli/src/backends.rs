//! Turning `--llm` / `--emb` specs into backends.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use mpvr_core::embedding::{EmbeddingStore, HttpEmbedBackend, StoreBackend, SyntheticBackendConfig, SyntheticEmbedder};
use mpvr_core::llm::{
    ChatRequest, FixtureRecorder, HttpLlmBackend, LlmBackend, LlmError, LlmResponse, MockBackend, ReplayBackend,
    ReplayCache, SyntheticLlm,
};
use mpvr_core::EmbeddingBackend;

use crate::config::RunConfig;
use crate::UsageError;

#[derive(Debug, Clone, PartialEq)]
pub enum LlmSpec {
    Http(Option<String>),
    Mock(PathBuf),
    Replay(PathBuf),
    Synthetic,
}

impl LlmSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        let (kind, arg) = spec.split_once(':').map_or((spec, None), |(k, a)| (k, Some(a)));
        Ok(match (kind, arg) {
            ("http", url) => Self::Http(url.map(str::to_string)),
            ("mock", Some(dir)) => Self::Mock(dir.into()),
            ("replay", Some(dir)) => Self::Replay(dir.into()),
            ("synthetic", None) => Self::Synthetic,
            _ => bail!(UsageError(format!(
                "bad --llm {spec:?}; expected http[:URL], mock:DIR, replay:DIR or synthetic"
            ))),
        })
    }

    /// Whether the backend could answer `req` without going to the network.
    pub fn predicts_hit(&self, req: &ChatRequest) -> bool {
        match self {
            Self::Mock(dir) => MockBackend::new(dir).fixture_path(req).exists(),
            Self::Replay(dir) => ReplayCache::open(dir).is_ok_and(|c| c.contains(req)),
            Self::Synthetic => true,
            Self::Http(_) => false,
        }
    }

    /// Flag first, then the config file, then plain HTTP.
    pub fn resolve(flag: Option<&str>, cfg: &RunConfig) -> Result<Self> {
        if let Some(spec) = flag {
            return Self::parse(spec);
        }
        let path = || {
            cfg.llm
                .path
                .clone()
                .ok_or_else(|| UsageError("config llm.path is required for this backend".into()))
        };
        Ok(match cfg.llm.backend.as_deref() {
            None | Some("http") => Self::Http(cfg.llm.base_url.clone()),
            Some("mock") => Self::Mock(path()?),
            Some("replay") => Self::Replay(path()?),
            Some("synthetic") => Self::Synthetic,
            Some(other) => bail!(UsageError(format!("unknown llm.backend {other:?}"))),
        })
    }
}

/// Answers nothing; behind a replay cache it turns misses into errors.
struct Offline;

impl LlmBackend for Offline {
    fn complete(&self, req: &ChatRequest) -> Result<LlmResponse, LlmError> {
        Err(LlmError::Config(format!(
            "request {} is not in the replay cache",
            req.request_hash()
        )))
    }
}

/// The backend behind `spec`, optionally recording every answer as a mock
/// fixture under `record`.
pub fn open_llm(spec: &LlmSpec, record: Option<PathBuf>) -> Result<Box<dyn LlmBackend>> {
    let backend: Box<dyn LlmBackend> = match spec {
        LlmSpec::Http(url) => Box::new(HttpLlmBackend::from_env(url.as_deref())?),
        LlmSpec::Mock(dir) => Box::new(MockBackend::new(dir)),
        LlmSpec::Replay(dir) => Box::new(ReplayBackend::new(
            Offline,
            ReplayCache::open(dir).with_context(|| format!("opening replay cache {}", dir.display()))?,
        )),
        LlmSpec::Synthetic => Box::new(SyntheticLlm::new("synthetic")),
    };
    Ok(match record {
        Some(dir) => Box::new(FixtureRecorder::new(backend, dir)),
        None => backend,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbSpec {
    Files(Vec<PathBuf>),
    Synthetic { dim: usize, seed: u64 },
    Http(String),
}

impl EmbSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || UsageError(format!("bad --emb {spec:?}; expected files:DIR[,DIR..], synthetic:DIM:SEED or http:URL"));
        let (kind, arg) = spec.split_once(':').ok_or_else(bad)?;
        Ok(match kind {
            "files" => Self::Files(arg.split(',').filter(|d| !d.is_empty()).map(PathBuf::from).collect()),
            "http" => Self::Http(arg.to_string()),
            "synthetic" => {
                let (dim, seed) = arg.split_once(':').ok_or_else(bad)?;
                Self::Synthetic {
                    dim: dim.parse().map_err(|_| bad())?,
                    seed: seed.parse().map_err(|_| bad())?,
                }
            }
            _ => bail!(bad()),
        })
    }

    pub fn resolve(flag: Option<&str>, cfg: &RunConfig) -> Result<Self> {
        if let Some(spec) = flag {
            return Self::parse(spec);
        }
        let e = &cfg.embedding;
        Ok(match e.backend.as_deref() {
            Some("files") => Self::Files(e.path.clone().into_iter().collect()),
            Some("http") => Self::Http(
                e.url
                    .clone()
                    .ok_or_else(|| UsageError("config embedding.url is required".into()))?,
            ),
            Some("synthetic") => Self::Synthetic {
                dim: e.dim.unwrap_or(512),
                seed: e.seed.unwrap_or(0),
            },
            Some(other) => bail!(UsageError(format!("unknown embedding.backend {other:?}"))),
            None => bail!(UsageError("this command needs --emb or an embedding section in --config".into())),
        })
    }

    pub fn open(&self, expected_dim: Option<usize>) -> Result<Box<dyn EmbeddingBackend>> {
        Ok(match self {
            Self::Files(dirs) => {
                if dirs.is_empty() {
                    bail!(UsageError("files: needs at least one directory".into()));
                }
                let stores = dirs
                    .iter()
                    .map(|d| EmbeddingStore::load(d).with_context(|| format!("loading store {}", d.display())))
                    .collect::<Result<Vec<_>>>()?;
                let backend = StoreBackend::merged(stores)?;
                if let Some(dim) = expected_dim.filter(|&d| d != backend.dim()) {
                    bail!("embedding store has dim {}, config expects {dim}", backend.dim());
                }
                Box::new(backend)
            }
            Self::Synthetic { dim, seed } => Box::new(SyntheticEmbedder::new(SyntheticBackendConfig {
                dim: *dim,
                seed: *seed,
            })?),
            Self::Http(url) => Box::new(HttpEmbedBackend::connect(url, expected_dim)?),
        })
    }
}
