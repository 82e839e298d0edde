//! A local model endpoint for client tests.
//!
//! Answers "Yes"/"No" from ground truth, delays each reply by a key-derived
//! jitter so completions arrive out of order, and misbehaves on request for
//! chosen (image, object) keys.

use std::collections::{BTreeSet, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use pope::corpus::Corpus;
use serde_json::{json, Value};

#[derive(Debug, Clone)]
pub enum Fault {
    /// Sleep this long on the first `times` attempts.
    Stall { delay: Duration, times: usize },
    /// Reply with this status on the first `times` attempts.
    Status { code: u16, times: usize },
    /// Reply 200 with a body lacking the text field.
    Garbage,
}

#[derive(Default)]
pub struct Stub {
    truth: HashMap<String, BTreeSet<String>>,
    faults: HashMap<String, Fault>,
    token: Option<String>,
    in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    pub requests: AtomicUsize,
    attempts: Mutex<HashMap<String, usize>>,
}

impl Stub {
    pub fn new(corpus: &Corpus) -> Self {
        let v = corpus.vocabulary();
        Stub {
            truth: corpus
                .images()
                .iter()
                .map(|i| {
                    let names = i
                        .ground_truth
                        .iter()
                        .map(|&o| v.name(o).to_string())
                        .collect();
                    (i.image_id.clone(), names)
                })
                .collect(),
            ..Stub::default()
        }
    }

    pub fn fault(mut self, image_id: &str, object: &str, fault: Fault) -> Self {
        self.faults.insert(key(image_id, object), fault);
        self
    }

    pub fn require_token(mut self, token: &str) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn attempts(&self, image_id: &str, object: &str) -> usize {
        self.attempts
            .lock()
            .unwrap()
            .get(&key(image_id, object))
            .copied()
            .unwrap_or(0)
    }
}

fn key(image_id: &str, object: &str) -> String {
    format!("{image_id}|{object}")
}

fn object_of(prompt: &str) -> &str {
    prompt
        .strip_prefix("Is there a ")
        .and_then(|p| p.strip_suffix(" in the image?"))
        .unwrap_or(prompt)
}

struct InFlight<'a>(&'a Stub);

impl<'a> InFlight<'a> {
    fn enter(stub: &'a Stub) -> Self {
        let now = stub.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        stub.max_in_flight.fetch_max(now, Ordering::SeqCst);
        InFlight(stub)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn answer(
    State(stub): State<Arc<Stub>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Response {
    let _guard = InFlight::enter(&stub);
    stub.requests.fetch_add(1, Ordering::SeqCst);
    if let Some(token) = &stub.token {
        let expected = format!("Bearer {token}");
        if headers.get("authorization").and_then(|h| h.to_str().ok()) != Some(expected.as_str()) {
            return StatusCode::UNAUTHORIZED.into_response();
        }
    }
    let image_id = body["image"].as_str().unwrap_or_default().to_string();
    let object = object_of(body["prompt"].as_str().unwrap_or_default()).to_string();
    let k = key(&image_id, &object);
    let attempt = {
        let mut attempts = stub.attempts.lock().unwrap();
        let n = attempts.entry(k.clone()).or_insert(0);
        *n += 1;
        *n
    };
    let jitter = k
        .bytes()
        .fold(7u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64))
        % 25;
    tokio::time::sleep(Duration::from_millis(5 + jitter)).await;
    match stub.faults.get(&k) {
        Some(Fault::Stall { delay, times }) if attempt <= *times => {
            tokio::time::sleep(*delay).await;
        }
        Some(Fault::Status { code, times }) if attempt <= *times => {
            return StatusCode::from_u16(*code).unwrap().into_response();
        }
        Some(Fault::Garbage) => return Json(json!({"unexpected": true})).into_response(),
        _ => {}
    }
    let present = stub
        .truth
        .get(&image_id)
        .is_some_and(|t| t.contains(&object));
    let text = if present {
        format!("Yes, there is a {object} in the image.")
    } else {
        format!("No, there is no {object} in the image.")
    };
    Json(json!({ "text": text })).into_response()
}

/// Serves `stub` on an ephemeral local port until the runtime shuts down.
pub async fn serve(stub: Arc<Stub>) -> SocketAddr {
    let app = Router::new()
        .route("/generate", post(answer))
        .with_state(stub);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    addr
}
