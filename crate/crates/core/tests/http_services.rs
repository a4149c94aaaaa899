//! The HTTP clients against real sockets: a tiny threaded server stands in
//! for the chat endpoint and the embed server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use mpvr_core::embedding::{EmbedError, EmbeddingBackend, HttpEmbedBackend, SyntheticBackendConfig, SyntheticEmbedder};
use mpvr_core::eval::{evaluate_corpus, LabeledSplit, SplitItem};
use mpvr_core::factory::{generate_corpus, generate_templates, GenerationSettings};
use mpvr_core::http::UreqTransport;
use mpvr_core::llm::{ChatRequest, HttpLlmBackend, LlmBackend, LlmError, RetryPolicy, SyntheticLlm};
use mpvr_core::meta_prompt::{InContextExample, MetaPromptOptions};
use mpvr_core::{ClassifierConfig, MetaGenConfig, QueryTemplate, TaskSpec};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    method: String,
    path: String,
    headers: Vec<(String, String)>,
    body: String,
}

type Handler = dyn Fn(&Seen) -> (u16, String) + Send + Sync;

struct Server {
    url: String,
    log: Arc<Mutex<Vec<Seen>>>,
}

impl Server {
    fn start(handler: impl Fn(&Seen) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let log = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let shared = log.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let (handler, log) = (handler.clone(), shared.clone());
                std::thread::spawn(move || serve(stream, &*handler, &log));
            }
        });
        Self { url, log }
    }

    fn seen(&self) -> Vec<Seen> {
        self.log.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<Seen>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.push((k.trim().to_lowercase(), v.trim().to_string()));
        }
    }
    let len = headers
        .iter()
        .find(|(k, _)| k == "content-length")
        .map_or(0, |(_, v)| v.parse().unwrap());
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    let seen = Seen {
        method,
        path,
        headers,
        body: String::from_utf8(body).unwrap(),
    };
    let (status, reply) = handler(&seen);
    log.lock().unwrap().push(seen);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    );
}

fn completion(text: &str) -> String {
    json!({
        "model": "m",
        "choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        "usage": {"total_tokens": 7}
    })
    .to_string()
}

fn fast_retry(max_retries: u32) -> RetryPolicy {
    RetryPolicy {
        max_retries,
        base_delay: Duration::from_millis(1),
        jitter: 0.0,
    }
}

fn header<'a>(s: &'a Seen, name: &str) -> Option<&'a str> {
    s.headers.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
}

#[test]
fn chat_client_retries_server_errors_and_sends_the_wire_shape() {
    let calls = Arc::new(Mutex::new(0));
    let counter = calls.clone();
    let server = Server::start(move |_| {
        let mut n = counter.lock().unwrap();
        *n += 1;
        if *n == 1 {
            (503, "{}".into())
        } else {
            (200, completion("a fine answer"))
        }
    });
    let llm = HttpLlmBackend::new(format!("{}/v1", server.url), Some("sk-test".into()), UreqTransport::default())
        .with_retry(fast_retry(2));
    let req = ChatRequest::user("gpt-x", "Describe a forest.", 50, 0.7).with_seed(3);
    let resp = llm.complete(&req).unwrap();
    assert_eq!(resp.text, "a fine answer");

    let seen = server.seen();
    assert_eq!(seen.len(), 2);
    let last = &seen[1];
    assert_eq!(last.method, "POST");
    assert_eq!(last.path, "/v1/chat/completions");
    assert_eq!(header(last, "authorization"), Some("Bearer sk-test"));
    let body: Value = serde_json::from_str(&last.body).unwrap();
    assert_eq!(body["model"], "gpt-x");
    assert_eq!(body["max_tokens"], 50);
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "Describe a forest.");
}

#[test]
fn chat_client_gives_up_on_auth_errors_and_after_the_retry_budget() {
    let server = Server::start(|_| (401, r#"{"error": "bad key"}"#.into()));
    let llm = HttpLlmBackend::new(server.url.clone(), None, UreqTransport::default()).with_retry(fast_retry(3));
    let err = llm.complete(&ChatRequest::user("m", "hi there", 10, 0.0)).unwrap_err();
    assert_eq!(err, LlmError::AuthError { status: 401 });
    assert_eq!(server.seen().len(), 1);

    let server = Server::start(|_| (500, "{}".into()));
    let llm = HttpLlmBackend::new(server.url.clone(), None, UreqTransport::default()).with_retry(fast_retry(2));
    let err = llm.complete(&ChatRequest::user("m", "hi there", 10, 0.0)).unwrap_err();
    assert!(matches!(err, LlmError::LlmUnavailable { attempts: 3, .. }), "{err:?}");
    assert_eq!(server.seen().len(), 3);
}

#[test]
fn embed_client_checks_dim_and_normalizes() {
    let server = Server::start(|s| match s.path.as_str() {
        "/v1/info" => (200, json!({"model_id": "clip-test", "dim": 2}).to_string()),
        "/v1/embed/text" => {
            let body: Value = serde_json::from_str(&s.body).unwrap();
            let n = body["texts"].as_array().unwrap().len();
            (200, json!({"dim": 2, "embeddings": vec![[3.0, 4.0]; n]}).to_string())
        }
        _ => (404, "{}".into()),
    });
    let emb = HttpEmbedBackend::connect(&server.url, Some(2)).unwrap();
    assert_eq!(emb.model_id(), "clip-test");
    let rows = emb.embed_texts(&["a".into(), "b".into()]).unwrap();
    assert_eq!(rows.len(), 2);
    assert!((rows[0].values[0] - 0.6).abs() < 1e-12 && (rows[0].values[1] - 0.8).abs() < 1e-12);
    assert!(matches!(emb.embed_image("x.jpg"), Err(EmbedError::Service(_))));

    assert!(matches!(
        HttpEmbedBackend::connect(&server.url, Some(512)),
        Err(EmbedError::DimensionMismatch { expected: 512, found: 2 })
    ));

    let closed = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", closed.local_addr().unwrap());
    drop(closed);
    assert!(matches!(
        HttpEmbedBackend::connect(&url, None),
        Err(EmbedError::EmbedServiceUnavailable(_))
    ));
}

/// Both services backed by the synthetic implementations, so the pipeline
/// over HTTP must agree with the pipeline run in-process.
#[test]
fn pipeline_over_http_matches_in_process_run() {
    let synthetic_llm = SyntheticLlm::new("m");
    let llm_server = Server::start(move |s| {
        let req: ChatRequest = {
            let body: Value = serde_json::from_str(&s.body).unwrap();
            ChatRequest {
                model: body["model"].as_str().unwrap().into(),
                messages: serde_json::from_value(body["messages"].clone()).unwrap(),
                max_tokens: body["max_tokens"].as_u64().unwrap() as usize,
                sampling_temperature: body["temperature"].as_f64().unwrap(),
                request_seed: body["seed"].as_u64(),
            }
        };
        (200, completion(&synthetic_llm.complete(&req).unwrap().text))
    });
    let embedder = SyntheticEmbedder::new(SyntheticBackendConfig { dim: 24, seed: 5 }).unwrap();
    let local = embedder.clone();
    let emb_server = Server::start(move |s| {
        let body: Value = serde_json::from_str(&s.body).unwrap_or(Value::Null);
        let rows = |vs: Vec<Vec<f64>>| (200, json!({"dim": 24, "embeddings": vs}).to_string());
        match s.path.as_str() {
            "/v1/info" => (200, json!({"model_id": local.model_id(), "dim": 24}).to_string()),
            "/v1/embed/text" => {
                let texts: Vec<String> = serde_json::from_value(body["texts"].clone()).unwrap();
                rows(local.embed_texts(&texts).unwrap().into_iter().map(|v| v.values).collect())
            }
            "/v1/embed/image" => {
                let paths: Vec<String> = serde_json::from_value(body["paths"].clone()).unwrap();
                rows(paths.iter().map(|p| local.embed_image(p).unwrap().values).collect())
            }
            _ => (404, "{}".into()),
        }
    });

    let task = TaskSpec::new("Toy", "toy photos", vec!["cat".into(), "dog".into(), "bird".into()]);
    let ic = InContextExample {
        dataset_name: "DTD".into(),
        metadata: "textures".into(),
        example_templates: vec![QueryTemplate::new("What does a {} texture look like?").unwrap()],
    };
    let split = LabeledSplit {
        class_order: task.class_labels.clone(),
        items: (0..9)
            .map(|i| SplitItem {
                key: format!("img{i}"),
                label_index: i % 3,
            })
            .collect(),
    };
    let cfg = MetaGenConfig {
        n_templates: 3,
        prompts_per_template: 2,
        ..MetaGenConfig::default()
    };
    let settings = GenerationSettings::new("m");
    let run = |llm: &dyn LlmBackend, emb: &dyn EmbeddingBackend| {
        let stage1 = generate_templates(&task, &ic, "system", &MetaPromptOptions::default(), llm, None, &cfg, &settings)
            .unwrap();
        let corpus = generate_corpus(&task, stage1.templates(), llm, None, &cfg, &settings).unwrap();
        evaluate_corpus(&corpus, &split, emb, &ClassifierConfig::default()).unwrap()
    };

    let http_llm = HttpLlmBackend::new(llm_server.url.clone(), None, UreqTransport::default());
    let http_emb = HttpEmbedBackend::connect(&emb_server.url, Some(24)).unwrap();
    let remote = run(&http_llm, &http_emb);
    let in_process = run(&SyntheticLlm::new("m"), &embedder);
    assert_eq!(remote, in_process);
    assert_eq!(llm_server.seen().len(), 1 + 3 * 3);
}
