use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{check_inputs, to_unit, EmbedError, EmbeddingBackend};
use crate::domain::EmbeddingVector;
use crate::http::{join_url, HttpReply, HttpTransport, Method, UreqTransport};

/// Largest batch the embed server accepts per request.
pub const MAX_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerInfo {
    pub model_id: String,
    pub dim: usize,
    #[serde(default = "yes")]
    pub normalizes: bool,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
struct EmbedReply {
    dim: usize,
    embeddings: Vec<Vec<f64>>,
}

/// Client for the embed server (`/v1/info`, `/v1/embed/text`,
/// `/v1/embed/image`).
pub struct HttpEmbedBackend<T = UreqTransport> {
    base_url: String,
    transport: T,
    expected_dim: Option<usize>,
    model_id: String,
}

impl HttpEmbedBackend<UreqTransport> {
    pub fn connect(base_url: &str, expected_dim: Option<usize>) -> Result<Self, EmbedError> {
        Self::with_transport(base_url, UreqTransport::default(), expected_dim)
    }
}

impl<T: HttpTransport> HttpEmbedBackend<T> {
    /// Queries `/v1/info` and checks the served dimension against
    /// `expected_dim` when one is given.
    pub fn with_transport(
        base_url: &str,
        transport: T,
        expected_dim: Option<usize>,
    ) -> Result<Self, EmbedError> {
        let mut backend = Self {
            base_url: base_url.to_string(),
            transport,
            expected_dim,
            model_id: String::new(),
        };
        let info = backend.info()?;
        if let Some(expected) = expected_dim {
            if expected != info.dim {
                return Err(EmbedError::DimensionMismatch {
                    expected,
                    found: info.dim,
                });
            }
        }
        backend.expected_dim = Some(info.dim);
        backend.model_id = info.model_id;
        Ok(backend)
    }

    pub fn info(&self) -> Result<ServerInfo, EmbedError> {
        let reply = self.call(Method::Get, "v1/info", None)?;
        serde_json::from_str(&reply.body).map_err(|e| EmbedError::Service(format!("bad /v1/info body: {e}")))
    }

    fn call(&self, method: Method, path: &str, body: Option<String>) -> Result<HttpReply, EmbedError> {
        let url = join_url(&self.base_url, path);
        let reply = self
            .transport
            .request(method, &url, &[], body.as_deref())
            .map_err(|e| EmbedError::EmbedServiceUnavailable(e.to_string()))?;
        match reply.status {
            200..=299 => Ok(reply),
            500..=599 => Err(EmbedError::EmbedServiceUnavailable(format!(
                "HTTP {} from {url}",
                reply.status
            ))),
            status => Err(EmbedError::Service(format!("HTTP {status} from {url}: {}", reply.body))),
        }
    }

    fn embed_batch(&self, path: &str, field: &str, items: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(MAX_BATCH) {
            let body = json!({ field: chunk }).to_string();
            let reply = self.call(Method::Post, path, Some(body))?;
            let parsed: EmbedReply = serde_json::from_str(&reply.body)
                .map_err(|e| EmbedError::Service(format!("bad embed body: {e}")))?;
            if parsed.embeddings.len() != chunk.len() {
                return Err(EmbedError::Service(format!(
                    "asked for {} embeddings, got {}",
                    chunk.len(),
                    parsed.embeddings.len()
                )));
            }
            for (key, row) in chunk.iter().zip(parsed.embeddings) {
                let expected = self.expected_dim.unwrap_or(parsed.dim);
                if row.len() != expected || parsed.dim != expected {
                    return Err(EmbedError::DimensionMismatch {
                        expected,
                        found: row.len(),
                    });
                }
                out.push(to_unit(row, key)?);
            }
        }
        Ok(out)
    }
}

impl<T: HttpTransport> EmbeddingBackend for HttpEmbedBackend<T> {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        check_inputs(texts)?;
        self.embed_batch("v1/embed/text", "texts", texts)
    }

    fn embed_image(&self, image_ref: &str) -> Result<EmbeddingVector, EmbedError> {
        if image_ref.is_empty() {
            return Err(EmbedError::EmptyInput("image ref is empty".into()));
        }
        let mut rows = self.embed_batch("v1/embed/image", "paths", &[image_ref.to_string()])?;
        Ok(rows.remove(0))
    }

    fn model_id(&self) -> String {
        self.model_id.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::TransportError;
    use std::sync::Mutex;

    /// Answers like the embed server: dim-3 rows, first component = index.
    struct FakeServer {
        dim: usize,
        bodies: Mutex<Vec<String>>,
    }

    impl HttpTransport for FakeServer {
        fn request(
            &self,
            _method: Method,
            url: &str,
            _headers: &[(String, String)],
            body: Option<&str>,
        ) -> Result<HttpReply, TransportError> {
            if url.ends_with("/v1/info") {
                return Ok(HttpReply {
                    status: 200,
                    body: json!({"model_id": "fake", "dim": self.dim, "normalizes": true}).to_string(),
                });
            }
            let body = body.unwrap().to_string();
            self.bodies.lock().unwrap().push(body.clone());
            let v: serde_json::Value = serde_json::from_str(&body).unwrap();
            let items = v.as_object().unwrap().values().next().unwrap().as_array().unwrap().len();
            let rows: Vec<Vec<f64>> = (0..items)
                .map(|i| {
                    let mut r = vec![0.0; self.dim];
                    r[0] = 1.0 + i as f64;
                    r[1] = 1.0;
                    r
                })
                .collect();
            Ok(HttpReply {
                status: 200,
                body: json!({"dim": self.dim, "embeddings": rows}).to_string(),
            })
        }
    }

    struct Down;

    impl HttpTransport for Down {
        fn request(&self, _: Method, _: &str, _: &[(String, String)], _: Option<&str>) -> Result<HttpReply, TransportError> {
            Err(TransportError::Connect("refused".into()))
        }
    }

    fn fake() -> FakeServer {
        FakeServer {
            dim: 3,
            bodies: Mutex::new(Vec::new()),
        }
    }

    #[test]
    fn rows_are_normalized_and_ordered() {
        let b = HttpEmbedBackend::with_transport("http://e", fake(), None).unwrap();
        assert_eq!(b.model_id(), "fake");
        let out = b.embed_texts(&["x".into(), "y".into()]).unwrap();
        assert!(out.iter().all(|v| v.is_unit()));
        assert!(out[1].values[0] > out[0].values[0]);
    }

    #[test]
    fn large_inputs_are_chunked() {
        let server = std::sync::Arc::new(fake());
        let b = HttpEmbedBackend::with_transport("http://e", server.clone(), None).unwrap();
        let texts: Vec<String> = (0..600).map(|i| format!("t{i}")).collect();
        assert_eq!(b.embed_texts(&texts).unwrap().len(), 600);
        assert_eq!(server.bodies.lock().unwrap().len(), 3);
    }

    #[test]
    fn client_dim_mismatch() {
        let err = HttpEmbedBackend::with_transport("http://e", fake(), Some(512)).err().unwrap();
        assert_eq!(err, EmbedError::DimensionMismatch { expected: 512, found: 3 });
    }

    #[test]
    fn server_down() {
        let err = HttpEmbedBackend::with_transport("http://e", Down, None).err().unwrap();
        assert!(matches!(err, EmbedError::EmbedServiceUnavailable(_)));
    }

    #[test]
    fn real_transport_against_closed_port() {
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let err = HttpEmbedBackend::connect(&format!("http://127.0.0.1:{port}"), None).err().unwrap();
        assert!(matches!(err, EmbedError::EmbedServiceUnavailable(_)), "{err:?}");
    }
}
