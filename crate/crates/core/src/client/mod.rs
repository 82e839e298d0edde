//! Prompt templates and polling of a model endpoint over HTTP.
//!
//! Each probe question becomes one JSON POST built from a configurable field
//! mapping, so any serving API that accepts a prompt plus an image reference
//! can be targeted without code changes. Requests run with bounded
//! concurrency; results come back in probe order.

pub mod template;

use std::time::Duration;

use base64::Engine;
use futures::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::builder::ProbeSet;
use crate::corpus::AnswerRecord;
use crate::error::{Error, Result};

pub use template::{render_prompt, PromptTemplate, TemplateKind};

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    2
}
fn default_concurrency() -> usize {
    4
}
fn default_backoff_initial() -> u64 {
    250
}
fn default_backoff_max() -> u64 {
    8_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestMapping {
    pub prompt_field: String,
    pub image_field: String,
    /// Also send the raw image id under this key.
    #[serde(default)]
    pub image_id_field: Option<String>,
    /// Static fields merged into every request body (model name, etc.).
    #[serde(default)]
    pub extra: Map<String, Value>,
}

impl Default for RequestMapping {
    fn default() -> Self {
        RequestMapping {
            prompt_field: "prompt".into(),
            image_field: "image".into(),
            image_id_field: None,
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseMapping {
    /// JSON pointer to the answer text. `""` accepts a plain-text body.
    pub text_pointer: String,
}

impl Default for ResponseMapping {
    fn default() -> Self {
        ResponseMapping {
            text_pointer: "/text".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageReference {
    /// Path or URL with an `{image_id}` placeholder.
    pub template: String,
    /// Read the referenced file and send its bytes base64-encoded instead.
    #[serde(default)]
    pub inline_base64: bool,
}

impl Default for ImageReference {
    fn default() -> Self {
        ImageReference {
            template: "{image_id}".into(),
            inline_base64: false,
        }
    }
}

impl ImageReference {
    fn resolve(&self, image_id: &str) -> std::result::Result<String, String> {
        let reference = self.template.replace("{image_id}", image_id);
        if !self.inline_base64 {
            return Ok(reference);
        }
        std::fs::read(&reference)
            .map(|bytes| base64::engine::general_purpose::STANDARD.encode(bytes))
            .map_err(|e| format!("cannot inline image {reference}: {e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    /// Name of the environment variable holding a bearer token.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_backoff_initial")]
    pub backoff_initial_ms: u64,
    #[serde(default = "default_backoff_max")]
    pub backoff_max_ms: u64,
    #[serde(default)]
    pub request: RequestMapping,
    #[serde(default)]
    pub response: ResponseMapping,
    #[serde(default)]
    pub image: ImageReference,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            auth_token_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_concurrency: default_concurrency(),
            backoff_initial_ms: default_backoff_initial(),
            backoff_max_ms: default_backoff_max(),
            request: RequestMapping::default(),
            response: ResponseMapping::default(),
            image: ImageReference::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Config("timeout_secs must be positive".into()));
        }
        if self.max_concurrency == 0 {
            return Err(Error::Config("max_concurrency must be at least 1".into()));
        }
        reqwest::Url::parse(&self.base_url)
            .map_err(|e| Error::Config(format!("base_url {:?}: {e}", self.base_url)))?;
        Ok(())
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .backoff_initial_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.backoff_max_ms);
        Duration::from_millis(ms)
    }
}

/// Why a poll run stopped early.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollAbort {
    pub error: String,
    /// Index of the first question without a recorded answer.
    pub resume_cursor: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PollOutcome {
    /// Answers for questions `start..start + records.len()`, in probe order.
    pub records: Vec<AnswerRecord>,
    pub aborted: Option<PollAbort>,
}

enum Attempt {
    /// Transient; `unreachable` marks a refused or failed connection.
    Retry {
        error: String,
        unreachable: bool,
    },
    /// Give up on this question, keep the run going.
    Skip(String),
    Abort(String),
}

enum Outcome {
    Answered(String),
    Failed(String),
    Fatal(String),
}

struct Poller<'a> {
    http: reqwest::Client,
    cfg: &'a EndpointConfig,
    token: Option<String>,
}

impl Poller<'_> {
    async fn attempt(&self, body: &Value) -> std::result::Result<String, Attempt> {
        let mut req = self.http.post(&self.cfg.base_url).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() || e.is_connect() {
                Attempt::Retry {
                    error: format!("request failed: {e}"),
                    unreachable: e.is_connect(),
                }
            } else {
                Attempt::Abort(format!("request failed: {e}"))
            }
        })?;
        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(Attempt::Abort(format!(
                "authorization rejected: HTTP {status}"
            )));
        }
        if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408 {
            return Err(Attempt::Retry {
                error: format!("HTTP {status}"),
                unreachable: false,
            });
        }
        if !status.is_success() {
            return Err(Attempt::Abort(format!("HTTP {status}")));
        }
        let text = resp.text().await.map_err(|e| {
            if e.is_timeout() {
                Attempt::Retry {
                    error: format!("reading body: {e}"),
                    unreachable: false,
                }
            } else {
                Attempt::Skip(format!("reading body: {e}"))
            }
        })?;
        self.extract(&text)
    }

    fn extract(&self, body: &str) -> std::result::Result<String, Attempt> {
        let pointer = &self.cfg.response.text_pointer;
        match serde_json::from_str::<Value>(body) {
            Ok(json) => match json.pointer(pointer) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(other) => Ok(other.to_string()),
                None => Err(Attempt::Skip(format!(
                    "response has no field at {pointer:?}"
                ))),
            },
            Err(_) if pointer.is_empty() => Ok(body.to_string()),
            Err(e) => Err(Attempt::Skip(format!("response is not JSON: {e}"))),
        }
    }

    async fn ask(&self, body: Value) -> Outcome {
        let mut attempt = 0;
        loop {
            match self.attempt(&body).await {
                Ok(text) => return Outcome::Answered(text),
                Err(Attempt::Skip(e)) => return Outcome::Failed(e),
                Err(Attempt::Abort(e)) => return Outcome::Fatal(e),
                Err(Attempt::Retry { error, unreachable }) if attempt >= self.cfg.max_retries => {
                    let note = format!("{error} (after {} attempts)", attempt + 1);
                    // An endpoint that never accepts a connection will not
                    // answer any other question either.
                    return if unreachable {
                        Outcome::Fatal(note)
                    } else {
                        Outcome::Failed(note)
                    };
                }
                Err(Attempt::Retry { error, .. }) => {
                    log::debug!("retrying after: {error}");
                    tokio::time::sleep(self.cfg.backoff(attempt)).await;
                    attempt += 1;
                }
            }
        }
    }
}

/// Sends every question from `start` on and collects the answers in order.
///
/// `sink` sees each record as soon as it and all earlier records are done,
/// so partial results survive an abort. Questions that fail after all
/// retries are recorded as unparsed with an error note; a failure no other
/// question could survive (bad credentials, unreachable host, rejected
/// request) stops the run with a resume cursor.
pub async fn poll<F>(
    endpoint: &EndpointConfig,
    probe: &ProbeSet,
    template: &PromptTemplate,
    start: usize,
    mut sink: F,
) -> Result<PollOutcome>
where
    F: FnMut(&AnswerRecord) -> Result<()>,
{
    endpoint.validate()?;
    let token = match &endpoint.auth_token_env {
        Some(var) => Some(std::env::var(var).map_err(|_| {
            Error::Config(format!(
                "environment variable {var} with the endpoint token is not set"
            ))
        })?),
        None => None,
    };
    let http = reqwest::Client::builder()
        .timeout(Duration::from_secs_f64(endpoint.timeout_secs))
        .build()
        .map_err(|e| Error::Transport(e.to_string()))?;
    let poller = Poller {
        http,
        cfg: endpoint,
        token,
    };

    let mut prepared = Vec::new();
    for (i, q) in probe.questions().iter().enumerate().skip(start) {
        let object = probe.object_name(q).to_string();
        let prompt = render_prompt(template, &object)?;
        prepared.push((i, q.image_id.clone(), object, prompt));
    }

    let poller = &poller;
    let mut answers = futures::stream::iter(prepared)
        .map(|(i, image_id, object, prompt)| async move {
            let outcome = match endpoint.image.resolve(&image_id) {
                Ok(image) => {
                    let mut body = endpoint.request.extra.clone();
                    body.insert(endpoint.request.prompt_field.clone(), Value::String(prompt));
                    body.insert(endpoint.request.image_field.clone(), Value::String(image));
                    if let Some(field) = &endpoint.request.image_id_field {
                        body.insert(field.clone(), Value::String(image_id.clone()));
                    }
                    poller.ask(Value::Object(body)).await
                }
                Err(e) => Outcome::Failed(e),
            };
            (i, image_id, object, outcome)
        })
        .buffered(endpoint.max_concurrency);

    let mut records = Vec::new();
    while let Some((i, image_id, object, outcome)) = answers.next().await {
        let record = match outcome {
            Outcome::Answered(text) => AnswerRecord::new(image_id, object, text),
            Outcome::Failed(note) => AnswerRecord::failed(image_id, object, note),
            Outcome::Fatal(error) => {
                return Ok(PollOutcome {
                    records,
                    aborted: Some(PollAbort {
                        error,
                        resume_cursor: i,
                    }),
                });
            }
        };
        sink(&record)?;
        records.push(record);
    }
    Ok(PollOutcome {
        records,
        aborted: None,
    })
}
