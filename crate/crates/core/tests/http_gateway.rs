//! The HTTP transport against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use llm_ens::gateway::{ChatMessage, GatewayConfig, GatewayError, HttpTransport, LlmGateway};

struct Captured {
    head: String,
    body: String,
}

/// Serves one scripted `(status, body)` reply per connection, then exits.
fn serve(replies: Vec<(u16, String)>) -> (String, JoinHandle<Vec<Captured>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut captured = Vec::new();
        for (status, reply) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut head = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                head.push_str(&line);
            }
            let length = head
                .lines()
                .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                .unwrap_or(0);
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            captured.push(Captured { head, body: String::from_utf8(body).unwrap() });
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
        captured
    });
    (url, handle)
}

fn completion(content: &str) -> String {
    serde_json::json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}).to_string()
}

fn gateway(url: &str) -> LlmGateway {
    let config = GatewayConfig {
        endpoint_url: url.to_string(),
        cache_enabled: false,
        backoff_base_ms: 1,
        timeout_ms: 5_000,
        ..GatewayConfig::default()
    };
    LlmGateway::new(config, Arc::new(HttpTransport::new(url, "test-key").unwrap())).unwrap()
}

#[test]
fn sends_openai_shaped_request_with_bearer_key() {
    let (url, server) = serve(vec![(200, completion("{1, calm}"))]);
    let gw = gateway(&url);
    let request = gw.request(vec![ChatMessage::system("sys"), ChatMessage::user("frame")]);
    assert_eq!(gw.complete(&request).unwrap(), "{1, calm}");

    let captured = server.join().unwrap();
    assert_eq!(captured.len(), 1);
    let head = captured[0].head.to_ascii_lowercase();
    assert!(head.starts_with("post /v1/chat/completions"));
    assert!(head.contains("authorization: bearer test-key"));
    let body: serde_json::Value = serde_json::from_str(&captured[0].body).unwrap();
    assert_eq!(body["model"], "gpt-4o-mini");
    assert_eq!(body["temperature"], 1.0);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "frame");
    assert!(!captured[0].body.contains("test-key"));
}

#[test]
fn retries_rate_limits_over_http() {
    let (url, server) = serve(vec![(429, "{}".into()), (503, "{}".into()), (200, completion("{2, busy}"))]);
    let gw = gateway(&url);
    let request = gw.request(vec![ChatMessage::user("frame")]);
    assert_eq!(gw.complete(&request).unwrap(), "{2, busy}");
    assert_eq!(gw.network_calls(), 3);
    assert_eq!(server.join().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, server) = serve(vec![(401, r#"{"error": "bad key"}"#.into())]);
    let gw = gateway(&url);
    let err = gw.complete(&gw.request(vec![ChatMessage::user("frame")])).unwrap_err();
    assert!(matches!(err, GatewayError::Status { status: 401, .. }), "{err:?}");
    assert_eq!(server.join().unwrap().len(), 1);
}

#[test]
fn refused_connection_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut gw_config = GatewayConfig { cache_enabled: false, backoff_base_ms: 1, max_retries: 0, ..GatewayConfig::default() };
    let url = format!("http://127.0.0.1:{port}/v1/chat/completions");
    gw_config.endpoint_url = url.clone();
    let gw = LlmGateway::new(gw_config, Arc::new(HttpTransport::new(&url, "k").unwrap())).unwrap();
    assert!(gw.complete(&gw.request(vec![ChatMessage::user("x")])).is_err());
}
