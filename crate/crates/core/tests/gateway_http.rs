//! HTTP backends against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use forge_core::gateway::{GatewayError, HttpChatBackend, HttpEmbeddingBackend, RetryPolicy};
use forge_core::{BackendBinding, ChatMessage, Gateway};

struct Canned {
    status: u16,
    headers: Vec<(&'static str, String)>,
    body: String,
}

impl Canned {
    fn json(status: u16, body: serde_json::Value) -> Self {
        Canned { status, headers: vec![], body: body.to_string() }
    }
}

/// Serves the canned responses in order, one per connection, and records
/// each request's path and body.
/// Request lines and bodies seen by the fake server.
type Seen = Arc<Mutex<Vec<(String, String)>>>;

fn serve(responses: Vec<Canned>) -> (String, Seen) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for canned in responses {
            let Ok((stream, _)) = listener.accept() else { return };
            handle(stream, canned, &log);
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn handle(mut stream: TcpStream, canned: Canned, log: &Mutex<Vec<(String, String)>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    reader.read_line(&mut request_line).unwrap();
    let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
    let mut length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" || line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    log.lock().unwrap().push((path, String::from_utf8_lossy(&body).into_owned()));
    let mut head = format!("HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n", canned.status, canned.body.len());
    for (k, v) in &canned.headers {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    head.push_str("\r\n");
    stream.write_all(head.as_bytes()).unwrap();
    stream.write_all(canned.body.as_bytes()).unwrap();
}

fn chat_reply(text: &str) -> Canned {
    Canned::json(200, serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}))
}

fn rate_limited() -> Canned {
    Canned { status: 429, headers: vec![("Retry-After", "0".into())], body: "{}".into() }
}

fn gateway(retries: u32) -> Gateway {
    Gateway::builder()
        .chat_backend("http", Arc::new(HttpChatBackend::new(Duration::from_secs(5))))
        .embedding_backend("http-embed", Arc::new(HttpEmbeddingBackend::new(Duration::from_secs(5))))
        .retry(RetryPolicy::immediate(retries))
        .build()
}

fn history() -> Vec<ChatMessage> {
    vec![ChatMessage::system("You are helpful."), ChatMessage::user("Hello")]
}

#[test]
fn rate_limits_are_retried_until_success() {
    let (endpoint, seen) = serve(vec![rate_limited(), rate_limited(), chat_reply("Hi there")]);
    let gw = gateway(3);
    let binding = BackendBinding::chat("http", endpoint, "test-model").with_temperature(0.2);
    let tag = forge_core::gateway::CallTag::new("t");
    let done = gw.complete_chat_tagged(&tag, &binding, &history()).unwrap();
    assert_eq!(done.message.content, "Hi there");
    assert_eq!(done.attempts, 3);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert!(seen.iter().all(|(p, _)| p == "/v1/chat/completions"));
    let body: serde_json::Value = serde_json::from_str(&seen[0].1).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][1]["content"], "Hello");
    assert_eq!(body["temperature"], 0.2);
    // Each attempt is logged as a request plus an outcome.
    assert!(gw.call_log().records().iter().filter(|r| r.messages.is_some()).count() == 3);
}

#[test]
fn exhausted_retries_surface_the_last_failure() {
    let (endpoint, _) = serve(vec![rate_limited(), rate_limited()]);
    let gw = gateway(2);
    let err = gw.complete_chat(&BackendBinding::chat("http", endpoint, "m"), &history()).unwrap_err();
    assert!(matches!(err, GatewayError::RateLimited { attempts: 2, .. }), "{err:?}");
}

#[test]
fn server_errors_are_transport_failures() {
    let (endpoint, _) = serve(vec![Canned::json(500, serde_json::json!({"error": "boom"}))]);
    let gw = gateway(1);
    let err = gw.complete_chat(&BackendBinding::chat("http", endpoint, "m"), &history()).unwrap_err();
    assert!(matches!(err, GatewayError::Transport { status: 500, attempts: 1, .. }), "{err:?}");
}

#[test]
fn malformed_bodies_are_bad_responses() {
    let (endpoint, _) = serve(vec![Canned::json(200, serde_json::json!({"choices": []}))]);
    let gw = gateway(1);
    let err = gw.complete_chat(&BackendBinding::chat("http", endpoint, "m"), &history()).unwrap_err();
    assert!(matches!(err, GatewayError::BadResponse { .. }), "{err:?}");
}

#[test]
fn embeddings_come_back_ordered_and_normalized() {
    let body = serde_json::json!({"data": [
        {"index": 1, "embedding": [0.0, 2.0]},
        {"index": 0, "embedding": [3.0, 4.0]},
    ]});
    let (endpoint, seen) = serve(vec![Canned::json(200, body)]);
    let gw = gateway(1);
    let binding = BackendBinding::embedding("http-embed", endpoint, "embed-model");
    let out = gw.embed_texts(&binding, &["a".into(), "b".into()]).unwrap();
    assert_eq!(out[0].values, vec![0.6, 0.8]);
    assert_eq!(out[1].values, vec![0.0, 1.0]);
    assert_eq!(seen.lock().unwrap()[0].0, "/v1/embeddings");
}

#[test]
fn missing_key_variable_is_reported() {
    let (endpoint, _) = serve(vec![]);
    let gw = gateway(1);
    let binding = BackendBinding::chat("http", endpoint, "m").with_auth("FORGE_TEST_KEY_THAT_IS_NEVER_SET");
    let err = gw.complete_chat(&binding, &history()).unwrap_err();
    assert!(err.to_string().contains("FORGE_TEST_KEY_THAT_IS_NEVER_SET"), "{err}");
}
