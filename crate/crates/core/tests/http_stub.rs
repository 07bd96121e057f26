//! HTTP backends against a local stub server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use ssdp_core::backends::http::transport::{FixtureTransport, RecordingTransport, UreqTransport};
use ssdp_core::backends::http::{HttpConfig, HttpEmbedder, HttpGenerator, HttpReward, JsonClient};
use ssdp_core::backends::{EmbeddingBackend, GeneratorBackend, RewardBackend};
use ssdp_core::BackendError;

struct Seen {
    path: String,
    body: Value,
}

/// Serve `replies` (status, body) in order, one connection each.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap().to_owned();
            let mut length = 0;
            loop {
                let mut header = String::new();
                reader.read_line(&mut header).unwrap();
                if header.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = header.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (addr, seen, handle)
}

fn config(base_url: &str) -> HttpConfig {
    HttpConfig {
        base_url: base_url.into(),
        backoff_ms: 1,
        api_key_env: String::new(),
        ..Default::default()
    }
}

fn live(cfg: &HttpConfig) -> Arc<JsonClient> {
    Arc::new(JsonClient::new(cfg, Arc::new(UreqTransport::new(Duration::from_secs(5)))))
}

fn choices(texts: &[&str]) -> String {
    json!({"choices": texts.iter().map(|t| json!({"message": {"role": "assistant", "content": t}})).collect::<Vec<_>>()})
        .to_string()
}

#[test]
fn generator_retries_a_server_error_then_parses() {
    let (url, seen, server) = serve(vec![
        (500, "{}".into()),
        (200, choices(&["a step", "x = 2. The answer is 2"])),
    ]);
    let cfg = config(&url);
    let g = HttpGenerator::new(&cfg, live(&cfg));
    let out = g.expand(&["What is 1+1?"], 2, 0).unwrap();
    server.join().unwrap();
    assert_eq!(out.len(), 2);
    assert!(!out[0].terminal && out[1].terminal);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[1].body["n"], 2);
    assert_eq!(seen[1].body["stop"], json!(["\n"]));
}

#[test]
fn short_replies_are_topped_up_with_a_second_request() {
    let (url, seen, server) = serve(vec![(200, choices(&["one"])), (200, choices(&["two", "three"]))]);
    let cfg = config(&url);
    let g = HttpGenerator::new(&cfg, live(&cfg));
    let out = g.expand(&["p"], 3, 0).unwrap();
    server.join().unwrap();
    assert_eq!(out.iter().map(|c| c.text.as_str()).collect::<Vec<_>>(), ["one", "two", "three"]);
    assert_eq!(seen.lock().unwrap()[1].body["n"], 2);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen, server) = serve(vec![(404, "{}".into())]);
    let cfg = config(&url);
    let g = HttpGenerator::new(&cfg, live(&cfg));
    let err = g.expand(&["p"], 2, 0).unwrap_err();
    server.join().unwrap();
    assert!(matches!(err, BackendError::Status { status: 404, attempts: 1, .. }));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn refused_connections_exhaust_the_attempts() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = config(&format!("http://127.0.0.1:{port}"));
    let g = HttpGenerator::new(&cfg, live(&cfg));
    assert!(matches!(
        g.expand(&["p"], 1, 0),
        Err(BackendError::Network { attempts: 3, .. })
    ));
}

#[test]
fn embedder_and_reward_round_trip() {
    let (url, seen, server) = serve(vec![
        (200, json!({"data": [{"embedding": [3.0, 4.0]}]}).to_string()),
        (200, json!({"score": 0.25}).to_string()),
    ]);
    let cfg = config(&url);
    let client = live(&cfg);
    let e = HttpEmbedder::new(&cfg, client.clone()).embed("text").unwrap();
    assert_eq!(e.values, vec![3.0, 4.0]);
    let r = HttpReward::new(format!("{url}/score"), client).score(&["p", "s"]).unwrap();
    server.join().unwrap();
    assert_eq!(r.phi, 0.25);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/embeddings");
    assert_eq!(seen[1].path, "/score");
    assert_eq!(seen[1].body, json!({"path": ["p", "s"]}));
}

#[test]
fn recorded_exchanges_replay_without_the_server() {
    let (url, _, server) = serve(vec![(200, choices(&["alpha", "beta. The answer is 9"]))]);
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("rec.jsonl");
    let cfg = config(&url);
    let recorder = RecordingTransport::new(UreqTransport::new(Duration::from_secs(5)), &fixtures).unwrap();
    let g = HttpGenerator::new(&cfg, Arc::new(JsonClient::new(&cfg, Arc::new(recorder))));
    let first = g.expand(&["q"], 2, 0).unwrap();
    server.join().unwrap();

    let replay_cfg = HttpConfig {
        base_url: "http://unreachable.invalid".into(),
        fixtures: Some(fixtures.clone()),
        ..cfg
    };
    let client = Arc::new(JsonClient::from_config(&replay_cfg).unwrap());
    let again = HttpGenerator::new(&replay_cfg, client).expand(&["q"], 2, 0).unwrap();
    let texts = |c: &[ssdp_core::backends::Candidate]| c.iter().map(|x| (x.text.clone(), x.terminal)).collect::<Vec<_>>();
    assert_eq!(texts(&first), texts(&again));
    assert!(FixtureTransport::load(&fixtures).is_ok());
}
