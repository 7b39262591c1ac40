//! Generation client against an in-process HTTP server.

use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::Value;
use tiny_http::{Header, Response, Server};

use clusterrag::eval::{copy_first_profile_tag, generate_batch, generate_text, GenerationConfig};
use clusterrag::Error;

/// Serves `handler(request_index, body)` → (status, body) until dropped.
struct Mock {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<String>>>,
    server: Arc<Server>,
    worker: Option<thread::JoinHandle<()>>,
}

impl Mock {
    fn start<F>(handler: F) -> Self
    where
        F: Fn(usize, &str) -> (u16, String) + Send + Sync + 'static,
    {
        let server = Arc::new(Server::http("127.0.0.1:0").unwrap());
        let url = format!("http://{}/generate", server.server_addr().to_ip().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let (s, h, b) = (server.clone(), hits.clone(), bodies.clone());
        let handler = Arc::new(handler);
        let worker = thread::spawn(move || {
            for mut req in s.incoming_requests() {
                let n = h.fetch_add(1, Ordering::SeqCst);
                let mut body = String::new();
                req.as_reader().read_to_string(&mut body).unwrap();
                b.lock().unwrap().push(body.clone());
                let handler = handler.clone();
                thread::spawn(move || {
                    let (status, text) = handler(n, &body);
                    let header = Header::from_bytes("Content-Type", "application/json").unwrap();
                    let _ = req.respond(Response::from_string(text).with_status_code(status).with_header(header));
                });
            }
        });
        Self {
            url,
            hits,
            bodies,
            server,
            worker: Some(worker),
        }
    }

    fn config(&self) -> GenerationConfig {
        GenerationConfig {
            endpoint_url: self.url.clone(),
            timeout_secs: 5.0,
            max_retries: 3,
            backoff_ms: 5,
            ..Default::default()
        }
    }
}

impl Drop for Mock {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn text_of(body: &str) -> String {
    let v: Value = serde_json::from_str(body).unwrap();
    serde_json::json!({ "text": copy_first_profile_tag(v["prompt"].as_str().unwrap()) }).to_string()
}

#[test]
fn request_body_follows_wire_contract() {
    let mock = Mock::start(|_, _| (200, r#"{"text":"OK"}"#.into()));
    let cfg = GenerationConfig {
        max_output_tokens: 8,
        beam_size: 4,
        ..mock.config()
    };
    let g = generate_text("x", &cfg).unwrap();
    assert_eq!(g.text, "OK");
    assert_eq!(g.attempts, 1);
    let body: Value = serde_json::from_str(&mock.bodies.lock().unwrap()[0]).unwrap();
    assert_eq!(body, serde_json::json!({"prompt": "x", "max_output_tokens": 8, "beam_size": 4}));
}

#[test]
fn server_errors_are_retried() {
    let mock = Mock::start(|n, _| {
        if n < 2 {
            (500, "boom".into())
        } else {
            (200, r#"{"text":"fine"}"#.into())
        }
    });
    let g = generate_text("p", &mock.config()).unwrap();
    assert_eq!(g.text, "fine");
    assert_eq!(g.attempts, 3);
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn persistent_failure_exhausts_retries() {
    let mock = Mock::start(|_, _| (503, "down".into()));
    let err = generate_text("p", &mock.config()).unwrap_err();
    assert!(matches!(err, Error::GenerationUnavailable { attempts: 4, .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
    assert_eq!(mock.hits.load(Ordering::SeqCst), 4);
}

#[test]
fn unreachable_host_is_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = GenerationConfig {
        endpoint_url: format!("http://127.0.0.1:{port}/generate"),
        timeout_secs: 2.0,
        max_retries: 2,
        backoff_ms: 1,
        ..Default::default()
    };
    let err = generate_text("p", &cfg).unwrap_err();
    assert!(matches!(err, Error::GenerationUnavailable { attempts: 3, .. }), "{err}");
}

#[test]
fn malformed_response_is_a_protocol_error() {
    let mock = Mock::start(|_, _| (200, r#"{"answer":"no text field"}"#.into()));
    let err = generate_text("p", &mock.config()).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);

    let mock = Mock::start(|_, _| (400, r#"{"error":"bad request"}"#.into()));
    let err = generate_text("p", &mock.config()).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn batch_keeps_order_under_concurrency() {
    let mock = Mock::start(|_, body| (200, text_of(body)));
    let prompts: Vec<String> = (0..24)
        .map(|i| format!("Given the user previous movie tag pairs:\nthe tag for the movie description: film {i} is tag{i}, which tag does the movie description: q relate to"))
        .collect();
    let refs: Vec<&str> = prompts.iter().map(String::as_str).collect();
    let cfg = GenerationConfig {
        concurrency: 6,
        ..mock.config()
    };
    let out = generate_batch(&refs, &cfg);
    for (i, r) in out.into_iter().enumerate() {
        assert_eq!(r.unwrap().text, format!("tag{i}"));
    }
    assert_eq!(mock.hits.load(Ordering::SeqCst), 24);
}
