//! The live client against a local mock chat-completions server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use adept_core::backend::{
    backoff_ceiling, Backend, BackendErrorKind, CallContext, CompletionRequest, FinishReason, LiveBackend,
};
use adept_core::config::{BackendKind, ModelConfig, PersonaSpec, PolicyOption, ScenarioSpec};
use adept_core::engine::run_debate;
use adept_core::prompt::{ChatMessage, Phase};
use serde_json::{json, Value};

type Responder = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

struct MockServer {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<Value>>>,
}

fn read_request(reader: &mut BufReader<TcpStream>) -> Option<Value> {
    let mut length = 0usize;
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    if line.is_empty() {
        return None;
    }
    loop {
        line.clear();
        reader.read_line(&mut line).ok()?;
        let header = line.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    serde_json::from_slice(&body).ok()
}

impl MockServer {
    fn start(respond: impl Fn(usize, &Value) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let respond: Arc<Responder> = Arc::new(respond);
        let (h, b) = (hits.clone(), bodies.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let (h, b, respond) = (h.clone(), b.clone(), respond.clone());
                thread::spawn(move || {
                    let mut writer = stream.try_clone().unwrap();
                    let mut reader = BufReader::new(stream);
                    while let Some(body) = read_request(&mut reader) {
                        let n = h.fetch_add(1, Ordering::SeqCst);
                        b.lock().unwrap().push(body.clone());
                        let (status, payload) = respond(n, &body);
                        let head = format!(
                            "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n",
                            payload.len()
                        );
                        if writer.write_all(head.as_bytes()).and_then(|_| writer.write_all(payload.as_bytes())).is_err() {
                            break;
                        }
                    }
                });
            }
        });
        MockServer { url, hits, bodies }
    }

    fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn ok(text: &str) -> (u16, String) {
    (
        200,
        json!({
            "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 11, "completion_tokens": 5, "total_tokens": 16}
        })
        .to_string(),
    )
}

fn config(url: &str, max_retries: u32) -> ModelConfig {
    ModelConfig {
        backend_kind: BackendKind::Live,
        endpoint_url: Some(url.to_string()),
        max_retries,
        request_timeout_secs: 5,
        ..ModelConfig::scripted("mock-model")
    }
}

fn request() -> CompletionRequest {
    CompletionRequest {
        messages: vec![ChatMessage::system("be brief".into()), ChatMessage::user("hello".into())],
        model_id: "mock-model".into(),
        temperature: 0.7,
        max_output_tokens: 64,
    }
}

fn ctx() -> CallContext {
    CallContext::new("Tester", Phase::Opening)
}

fn recording_backend(cfg: &ModelConfig) -> (LiveBackend, Arc<Mutex<Vec<Duration>>>) {
    let slept = Arc::new(Mutex::new(Vec::new()));
    let s = slept.clone();
    let backend = LiveBackend::new(cfg, "test-key")
        .unwrap()
        .with_seed(3)
        .with_sleeper(move |d| s.lock().unwrap().push(d));
    (backend, slept)
}

#[test]
fn sends_openai_shaped_body() {
    let server = MockServer::start(|_, _| ok("hi there"));
    let (backend, _) = recording_backend(&config(&server.url, 0));
    let result = backend.complete(&ctx(), &request()).unwrap();
    assert_eq!(result.text, "hi there");
    assert_eq!(result.finish_reason, FinishReason::Stop);
    assert_eq!(result.token_usage.unwrap().completion, 5);
    let body = server.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["model"], "mock-model");
    assert_eq!(body["max_tokens"], 64);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "hello");
}

#[test]
fn retries_transient_failures_with_bounded_backoff() {
    let server = MockServer::start(|n, _| match n {
        0 => (429, r#"{"error":"slow down"}"#.into()),
        1 => (503, "unavailable".into()),
        _ => ok("finally"),
    });
    let (backend, slept) = recording_backend(&config(&server.url, 3));
    let result = backend.complete(&ctx(), &request()).unwrap();
    assert_eq!(result.text, "finally");
    assert_eq!(server.hits(), 3);
    let slept = slept.lock().unwrap();
    assert_eq!(slept.len(), 2);
    for (attempt, d) in slept.iter().enumerate() {
        assert!(*d <= backoff_ceiling(attempt as u32), "{attempt}: {d:?}");
    }
}

#[test]
fn gives_up_after_max_retries() {
    let server = MockServer::start(|_, _| (500, "boom".into()));
    let (backend, slept) = recording_backend(&config(&server.url, 2));
    let err = backend.complete(&ctx(), &request()).unwrap_err();
    assert_eq!(err.kind, BackendErrorKind::Transport);
    assert_eq!(server.hits(), 3);
    assert_eq!(slept.lock().unwrap().len(), 2);
}

#[test]
fn auth_and_malformed_are_not_retried() {
    let server = MockServer::start(|_, _| (401, r#"{"error":"bad key"}"#.into()));
    let (backend, _) = recording_backend(&config(&server.url, 3));
    assert_eq!(backend.complete(&ctx(), &request()).unwrap_err().kind, BackendErrorKind::Auth);
    assert_eq!(server.hits(), 1);

    let server = MockServer::start(|_, _| (200, "this is not json".into()));
    let (backend, _) = recording_backend(&config(&server.url, 3));
    assert_eq!(
        backend.complete(&ctx(), &request()).unwrap_err().kind,
        BackendErrorKind::MalformedResponse
    );
    assert_eq!(server.hits(), 1);
}

#[test]
fn context_overflow_is_reported() {
    let server = MockServer::start(|_, _| {
        (400, r#"{"error":{"code":"context_length_exceeded","message":"too long"}}"#.into())
    });
    let (backend, _) = recording_backend(&config(&server.url, 3));
    assert_eq!(
        backend.complete(&ctx(), &request()).unwrap_err().kind,
        BackendErrorKind::ContextOverflow
    );
    assert_eq!(server.hits(), 1);
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let (backend, slept) = recording_backend(&config(&format!("http://127.0.0.1:{port}/x"), 1));
    let err = backend.complete(&ctx(), &request()).unwrap_err();
    assert!(matches!(err.kind, BackendErrorKind::Transport | BackendErrorKind::Timeout));
    assert_eq!(slept.lock().unwrap().len(), 1);
}

fn persona(name: &str) -> PersonaSpec {
    PersonaSpec {
        name: name.into(),
        principle: format!("{name}'s principle"),
        approach: vec!["look closely".into()],
        core_questions: vec!["who is affected?".into()],
        decision_criteria: vec!["least harm".into()],
        deliberation_style: None,
        forbidden_moves: vec![],
        strengths: None,
        challenges: None,
        citations: None,
    }
}

#[test]
fn two_persona_debate_over_http() {
    let server = MockServer::start(|n, _| ok(&format!("Reply number {n}. <vote>{}</vote>", 1 + n % 2)));
    let scenario = ScenarioSpec {
        title: "Mock".into(),
        narrative: "Two options.".into(),
        options: (1..=2)
            .map(|id| PolicyOption {
                id,
                label: format!("L{id}"),
                description: format!("D{id}"),
            })
            .collect(),
    };
    let panel = vec![persona("North"), persona("South")];
    let mut cfg = config(&server.url, 0);
    cfg.parallel_independent_calls = true;
    let backend = LiveBackend::new(&cfg, "test-key").unwrap();
    let trace = run_debate(&scenario, &panel, &cfg, &backend).unwrap();
    assert_eq!(trace.utterances.len(), 4);
    assert_eq!(trace.ballots.len(), 2);
    assert!(trace.violations().is_empty(), "{:?}", trace.violations());
    assert_eq!(server.hits(), 7);
    assert!(trace.utterances.iter().all(|u| u.token_usage.is_some()));
    assert!(!serde_json::to_string(&trace).unwrap().contains("test-key"));
    for body in server.bodies.lock().unwrap().iter() {
        assert!(!body.to_string().contains("test-key"));
    }
}
