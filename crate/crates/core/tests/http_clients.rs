//! HTTP clients against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use dforge::generation::{ChatClient, GenerationConfig, HttpChatClient};
use dforge::net::HttpPolicy;
use dforge::privacy_eval::{HttpPageFetcher, HttpSearchClient, PageFetcher, SearchClient};
use dforge::textmetrics::{EmbeddingProvider, HttpEmbeddingProvider};

#[derive(Debug, Clone)]
struct Captured {
    request_line: String,
    headers: Vec<(String, String)>,
    body: String,
}

impl Captured {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// Serves the scripted `(status, content type, body)` responses, one per
/// connection, and records every request.
fn serve(responses: Vec<(u16, &'static str, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Vec::new()));
    let log2 = Arc::clone(&log);
    thread::spawn(move || {
        for (status, ctype, body) in responses {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream);
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                headers.push((k.trim().to_string(), v.trim().to_string()));
            }
            let len: usize = headers
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
                .map_or(0, |(_, v)| v.parse().unwrap());
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log2.lock().unwrap().push(Captured {
                request_line: request_line.trim_end().to_string(),
                headers,
                body: String::from_utf8(buf).unwrap(),
            });
            let mut stream = reader.into_inner();
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: {ctype}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (addr, log)
}

fn fast_policy() -> HttpPolicy {
    HttpPolicy {
        timeout: Duration::from_secs(5),
        max_retries: 2,
        initial_backoff: Duration::from_millis(5),
        max_backoff: Duration::from_millis(20),
        min_interval: Duration::ZERO,
    }
}

const JSON: &str = "application/json";

#[test]
fn chat_request_shape_and_reply() {
    let reply = r#"{"choices":[{"message":{"role":"assistant","content":"\"Changed Post\": hi"}}]}"#;
    let (addr, log) = serve(vec![(200, JSON, reply.to_string())]);
    let client = HttpChatClient::new(Some("sk-test".into()), fast_policy()).unwrap();
    let config = GenerationConfig {
        endpoint: format!("{addr}/v1/chat/completions"),
        ..GenerationConfig::zephyr()
    };
    let out = client
        .complete("SYS", &["step".to_string(), "text".to_string()], &config)
        .unwrap();
    assert_eq!(out, "\"Changed Post\": hi");

    let req = log.lock().unwrap()[0].clone();
    assert_eq!(req.request_line, "POST /v1/chat/completions HTTP/1.1");
    assert_eq!(req.header("authorization"), Some("Bearer sk-test"));
    let body: serde_json::Value = serde_json::from_str(&req.body).unwrap();
    assert_eq!(body["model"], config.model_name.as_str());
    assert_eq!(body["temperature"], 1.0);
    assert_eq!(body["top_p"], 0.95);
    assert_eq!(body["max_tokens"], 1024);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][0]["content"], "SYS");
    assert_eq!(body["messages"][1]["role"], "user");
    assert_eq!(body["messages"][1]["content"], "step\n\ntext");
}

#[test]
fn retries_on_server_errors_then_succeeds() {
    let ok = r#"{"choices":[{"message":{"content":"done"}}]}"#;
    let (addr, log) = serve(vec![
        (503, "text/plain", "busy".into()),
        (429, "text/plain", "slow down".into()),
        (200, JSON, ok.into()),
    ]);
    let client = HttpChatClient::new(None, fast_policy()).unwrap();
    let config = GenerationConfig {
        endpoint: addr,
        ..GenerationConfig::default()
    };
    assert_eq!(client.complete("s", &["u".into()], &config).unwrap(), "done");
    let log = log.lock().unwrap();
    assert_eq!(log.len(), 3);
    assert!(log[0].header("authorization").is_none());
}

#[test]
fn client_errors_are_not_retried() {
    let (addr, log) = serve(vec![
        (400, "text/plain", "bad request".into()),
        (200, JSON, "{}".into()),
    ]);
    let client = HttpChatClient::new(None, fast_policy()).unwrap();
    let config = GenerationConfig {
        endpoint: addr,
        ..GenerationConfig::default()
    };
    let err = client.complete("s", &["u".into()], &config).unwrap_err();
    assert!(err.to_string().contains("400"), "{err}");
    assert_eq!(log.lock().unwrap().len(), 1);
}

#[test]
fn gives_up_after_max_retries() {
    let (addr, log) = serve(vec![(500, "text/plain", String::new()); 3]);
    let client = HttpChatClient::new(None, fast_policy()).unwrap();
    let config = GenerationConfig {
        endpoint: addr,
        ..GenerationConfig::default()
    };
    assert!(client.complete("s", &["u".into()], &config).is_err());
    assert_eq!(log.lock().unwrap().len(), 3);
}

#[test]
fn search_sends_query_and_k() {
    let body = r#"[{"rank":2,"url":"https://b","snippet":"y"},{"rank":1,"url":"https://a","snippet":"x"},{"rank":3,"url":"https://c"}]"#;
    let (addr, log) = serve(vec![(200, JSON, body.into())]);
    let client = HttpSearchClient::new(format!("{addr}/search"), Some("key".into()), fast_policy()).unwrap();
    let results = client.search("my cat & dog", 2).unwrap();
    assert_eq!(
        results.iter().map(|r| r.url.as_str()).collect::<Vec<_>>(),
        vec!["https://a", "https://b"]
    );
    let req = log.lock().unwrap()[0].clone();
    assert!(req.request_line.starts_with("GET /search?"), "{}", req.request_line);
    assert!(req.request_line.contains("q=my+cat+%26+dog") || req.request_line.contains("q=my%20cat%20%26%20dog"));
    assert!(req.request_line.contains("k=2"));
    assert_eq!(req.header("authorization"), Some("Bearer key"));
}

#[test]
fn fetcher_strips_html() {
    let html = "<html><body><h1>Title</h1><script>x()</script><p>I&#39;m here</p></body></html>";
    let (addr, _) = serve(vec![(200, "text/html", html.into())]);
    let fetcher = HttpPageFetcher::with_policy(fast_policy()).unwrap();
    assert_eq!(fetcher.fetch(&format!("{addr}/r/x")).unwrap(), "Title I'm here");
}

#[test]
fn embedding_provider_round_trip() {
    let (addr, log) = serve(vec![
        (200, JSON, r#"{"vectors":[[1.0,0.0],[0.0,1.0]]}"#.into()),
        (200, JSON, r#"{"vectors":[[0.5,0.5]]}"#.into()),
        (200, JSON, r#"{"vectors":[[1.0,2.0,3.0]]}"#.into()),
    ]);
    let provider = HttpEmbeddingProvider::new(format!("{addr}/embed"), 2, None).unwrap();
    assert_eq!(provider.token_vectors("a b").unwrap().len(), 2);
    assert_eq!(provider.pooled_vector("a b").unwrap(), vec![0.5, 0.5]);
    assert!(provider.pooled_vector("a b").is_err());
    let log = log.lock().unwrap();
    let first: serde_json::Value = serde_json::from_str(&log[0].body).unwrap();
    assert_eq!(first, serde_json::json!({"texts": ["a b"]}));
    let second: serde_json::Value = serde_json::from_str(&log[1].body).unwrap();
    assert_eq!(second["pooled"], true);
}
