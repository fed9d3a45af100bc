//! Live clients against a scripted in-process HTTP server: request shapes,
//! the shared token schema, retries and error classification.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};
use vistext_core::lmm::{HttpBackend, HttpBackendConfig};
use vistext_core::ocr::LiveOcrConfig;
use vistext_core::{
    Error, ErrorClass, FixtureOcr, GenerationRequest, ImageRef, LiveOcr, LmmGateway, OcrGateway,
    RetryPolicy,
};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    headers: Vec<String>,
    body: Value,
}

/// Serves the canned `(status, body)` replies in order, one per connection.
struct Server {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
    handle: Option<JoinHandle<()>>,
}

impl Server {
    fn start(replies: Vec<(u16, String)>) -> Server {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        let handle = std::thread::spawn(move || {
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let mut headers = Vec::new();
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end().to_string();
                    if line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                    headers.push(line);
                }
                let mut buf = vec![0; length];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(Seen {
                    path: request_line.split(' ').nth(1).unwrap_or("").to_string(),
                    headers,
                    body: serde_json::from_slice(&buf).unwrap_or(Value::Null),
                });
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        Server {
            url,
            seen,
            handle: Some(handle),
        }
    }

    fn requests(mut self) -> Vec<Seen> {
        self.handle.take().unwrap().join().unwrap();
        self.seen.lock().unwrap().clone()
    }
}

fn image_file(dir: &tempfile::TempDir) -> ImageRef {
    let path = dir.path().join("sign.jpg");
    std::fs::write(&path, b"\xff\xd8\xff\xe0fake").unwrap();
    ImageRef::with_path("sign.jpg", path)
}

fn ocr_client(url: &str, retries: u32) -> LiveOcr {
    LiveOcr::new(LiveOcrConfig {
        max_retries: retries,
        retry_base_delay: Duration::from_millis(5),
        timeout: Duration::from_secs(5),
        ..LiveOcrConfig::new(url)
    })
}

const SIDECAR_REPLY: &str = r#"{"tokens":[{"text":"Domino's","bbox":[12.0,30.5,140.0,62.0],"conf":0.97},{"text":"PIZZA","bbox":[150.0,31.0,240.0,61.0],"conf":0.91}],"backend":"dbnet+parseq"}"#;

#[test]
fn ocr_request_and_token_schema() {
    let server = Server::start(vec![(200, SIDECAR_REPLY.into())]);
    let dir = tempfile::tempdir().unwrap();
    let result = ocr_client(&server.url, 0).recognize(&image_file(&dir)).unwrap();
    assert_eq!(result.image_id, "sign.jpg");
    assert_eq!(result.backend_tag, "dbnet+parseq");
    assert_eq!(result.visual_text(0.3), "Domino's PIZZA");
    let seen = server.requests();
    assert_eq!(seen[0].path, "/ocr");
    assert_eq!(seen[0].body["image_b64"], "/9j/4GZha2U=");
    assert!(seen[0].body.get("backend").is_none());
}

#[test]
fn sidecar_output_loads_as_fixture_unchanged() {
    let reply: Value = serde_json::from_str(SIDECAR_REPLY).unwrap();
    let line = json!({"image": "sign.jpg", "tokens": reply["tokens"], "backend": reply["backend"]});
    let fixture = FixtureOcr::from_reader(line.to_string().as_bytes(), "contract", None).unwrap();
    let via_fixture = fixture.recognize(&ImageRef::new("sign.jpg")).unwrap();

    let server = Server::start(vec![(200, SIDECAR_REPLY.into())]);
    let dir = tempfile::tempdir().unwrap();
    let via_http = ocr_client(&server.url, 0).recognize(&image_file(&dir)).unwrap();
    assert_eq!(via_fixture, via_http);
}

#[test]
fn ocr_retries_transient_statuses() {
    let server = Server::start(vec![
        (503, "{}".into()),
        (429, "{}".into()),
        (200, SIDECAR_REPLY.into()),
    ]);
    let dir = tempfile::tempdir().unwrap();
    let result = ocr_client(&server.url, 2).recognize(&image_file(&dir)).unwrap();
    assert_eq!(result.tokens.len(), 2);
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn ocr_gives_up_after_retries() {
    let server = Server::start(vec![(500, "{}".into()), (502, "{}".into())]);
    let dir = tempfile::tempdir().unwrap();
    let err = ocr_client(&server.url, 1).recognize(&image_file(&dir)).unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 2, .. }), "{err:?}");
    assert_eq!(err.class(), ErrorClass::Backend);
    server.requests();
}

#[test]
fn ocr_rejects_malformed_tokens() {
    let bad = r#"{"tokens":[{"text":"x","bbox":[5,5,1,1],"conf":0.5}],"backend":"b"}"#;
    let server = Server::start(vec![(200, bad.into())]);
    let dir = tempfile::tempdir().unwrap();
    let err = ocr_client(&server.url, 0).recognize(&image_file(&dir)).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err:?}");
    server.requests();
}

#[test]
fn ocr_client_error_is_not_retried() {
    let server = Server::start(vec![(400, r#"{"detail":"unsupported image"}"#.into())]);
    let dir = tempfile::tempdir().unwrap();
    let err = ocr_client(&server.url, 3).recognize(&image_file(&dir)).unwrap_err();
    assert!(matches!(err, Error::Protocol(ref m) if m.contains("400")), "{err:?}");
    assert_eq!(server.requests().len(), 1);
}

fn gateway(url: &str, retries: u32) -> LmmGateway {
    let backend = HttpBackend::new(HttpBackendConfig {
        base_url: url.to_string(),
        api_key: Some("sk-test".into()),
        model: "llava-1.5-7b".into(),
        timeout: Duration::from_secs(5),
    });
    let retry = RetryPolicy {
        max_retries: retries,
        base_delay: Duration::from_millis(5),
        max_delay: Duration::from_millis(20),
    };
    LmmGateway::new(Box::new(backend), retry, 2)
}

fn completion(text: &str) -> String {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn chat_completion_round_trip() {
    let server = Server::start(vec![(200, completion("Domino's Pizza\nUSER: more"))]);
    let dir = tempfile::tempdir().unwrap();
    let mut req = GenerationRequest::new("link this", 32).with_image(image_file(&dir));
    req.stop_sequences = vec!["\nUSER:".into()];
    let out = gateway(&server.url, 0).generate(&req).unwrap();
    assert_eq!(out.text, "Domino's Pizza");
    assert_eq!(out.backend_tag, "http:llava-1.5-7b");
    let seen = server.requests();
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert!(seen[0].headers.iter().any(|h| h == "authorization: Bearer sk-test" || h == "Authorization: Bearer sk-test"));
    let body = &seen[0].body;
    assert_eq!(body["model"], "llava-1.5-7b");
    assert_eq!(body["max_tokens"], 32);
    assert_eq!(body["messages"][0]["content"][0]["text"], "link this");
    assert_eq!(
        body["messages"][0]["content"][1]["image_url"]["url"],
        "data:image/jpeg;base64,/9j/4GZha2U="
    );
}

#[test]
fn chat_retries_then_succeeds() {
    let server = Server::start(vec![(503, "{}".into()), (200, completion("yes"))]);
    let out = gateway(&server.url, 2)
        .generate(&GenerationRequest::new("q", 8))
        .unwrap();
    assert_eq!(out.text, "yes");
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn chat_client_error_surfaces_message() {
    let server = Server::start(vec![(401, r#"{"error":{"message":"bad key"}}"#.into())]);
    let err = gateway(&server.url, 3)
        .generate(&GenerationRequest::new("q", 8))
        .unwrap_err();
    assert!(matches!(err, Error::Protocol(ref m) if m.contains("bad key")), "{err:?}");
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn chat_exhausted_retries_report_attempts() {
    let server = Server::start(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
    let err = gateway(&server.url, 2)
        .generate(&GenerationRequest::new("q", 8))
        .unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 3, .. }), "{err:?}");
    server.requests();
}

#[test]
fn chat_without_choices_is_a_protocol_error() {
    let server = Server::start(vec![(200, r#"{"choices":[]}"#.into())]);
    let err = gateway(&server.url, 0)
        .generate(&GenerationRequest::new("q", 8))
        .unwrap_err();
    assert!(matches!(err, Error::Protocol(_)));
    server.requests();
}
