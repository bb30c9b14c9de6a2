//! Completion transports: remote chat-completions endpoint, scripted fixture
//! replay, and a recording wrapper that captures live traffic for later
//! replay.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::types::{ChatRequest, Usage};

/// What a backend returns for one completion. Usage is optional; the gateway
/// falls back to whitespace-token accounting when a transport has none.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    pub usage: Option<Usage>,
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest, digest: &str) -> Result<BackendReply>;
    fn name(&self) -> &'static str;
}

// ---------------------------------------------------------------------------
// fixture files

/// One line of a fixture file.
#[derive(Debug, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub digest: String,
    pub response: String,
}

/// Load fixture records from a JSONL file, or from every `*.jsonl` file in a
/// directory (sorted by name). Later records win on duplicate digests.
pub fn load_fixtures(path: &Path) -> Result<HashMap<String, String>> {
    let mut files = Vec::new();
    if path.is_dir() {
        let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(path, e))?;
            let p = entry.path();
            if p.extension().is_some_and(|ext| ext == "jsonl") {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }

    let mut map = HashMap::new();
    for file in &files {
        let content = fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: FixtureRecord =
                serde_json::from_str(line).map_err(|e| Error::SchemaError {
                    line: i + 1,
                    field: "fixture".into(),
                    reason: e.to_string(),
                })?;
            map.insert(record.digest, record.response);
        }
    }
    Ok(map)
}

/// Write fixture records as JSONL, sorted by digest for stable output.
pub fn write_fixture_file(path: &Path, fixtures: &HashMap<String, String>) -> Result<()> {
    let mut records: Vec<(&String, &String)> = fixtures.iter().collect();
    records.sort();
    let mut out = String::new();
    for (digest, response) in records {
        let record = FixtureRecord {
            digest: digest.clone(),
            response: response.clone(),
        };
        out.push_str(&serde_json::to_string(&record).expect("fixture serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// scripted

/// Replays canned responses by request digest. In strict mode an unknown
/// digest is an error; otherwise it yields a deterministic placeholder so
/// smoke runs can proceed.
pub struct ScriptedBackend {
    fixtures: HashMap<String, String>,
    strict: bool,
}

impl ScriptedBackend {
    pub fn load(path: &Path, strict: bool) -> Result<Self> {
        Ok(ScriptedBackend {
            fixtures: load_fixtures(path)?,
            strict,
        })
    }

    pub fn from_map(fixtures: HashMap<String, String>, strict: bool) -> Self {
        ScriptedBackend { fixtures, strict }
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, _request: &ChatRequest, digest: &str) -> Result<BackendReply> {
        match self.fixtures.get(digest) {
            Some(text) => Ok(BackendReply {
                text: text.clone(),
                usage: None,
            }),
            None if self.strict => Err(Error::ScriptedMiss {
                digest: digest.to_string(),
            }),
            None => Ok(BackendReply {
                text: format!("[scripted-fallback {}]", &digest[..12.min(digest.len())]),
                usage: None,
            }),
        }
    }

    fn name(&self) -> &'static str {
        "scripted"
    }
}

// ---------------------------------------------------------------------------
// remote

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub backoff_cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base: Duration::from_millis(500),
            backoff_cap: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let exp = self.backoff_base.saturating_mul(1u32 << attempt.min(16));
        exp.min(self.backoff_cap)
    }
}

/// Environment variable holding the bearer token for remote endpoints.
pub const API_KEY_ENV: &str = "GSEO_API_KEY";

/// Talks the common chat-completions JSON protocol: POST with a messages
/// array, answer in `choices[0].message.content`. Works against any
/// compatible endpoint; the URL is used exactly as given.
pub struct RemoteBackend {
    endpoint_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<i64>,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum AttemptError {
    RateLimited,
    Transient(String),
    Fatal(Error),
}

impl RemoteBackend {
    pub fn new(endpoint_url: String, auth_env: Option<String>, retry: RetryPolicy) -> Result<Self> {
        let env_name = auth_env.as_deref().unwrap_or(API_KEY_ENV);
        let api_key = std::env::var(env_name).ok().filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::NetworkUnreachable {
                attempts: 0,
                detail: e.to_string(),
            })?;
        Ok(RemoteBackend {
            endpoint_url,
            api_key,
            client,
            retry,
        })
    }

    fn attempt(&self, request: &ChatRequest) -> std::result::Result<BackendReply, AttemptError> {
        let body = WireRequest {
            model: &request.model_id,
            messages: request
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: m.role.as_str(),
                    content: &m.text,
                })
                .collect(),
            temperature: request.temperature,
            top_p: request.top_p,
            max_tokens: request.max_tokens,
            seed: request.seed_hint,
        };

        let mut builder = self.client.post(&self.endpoint_url).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }

        let response = builder
            .send()
            .map_err(|e| AttemptError::Transient(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 {
            return Err(AttemptError::RateLimited);
        }
        if status.is_server_error() {
            return Err(AttemptError::Transient(format!("server status {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(Error::ProtocolError {
                detail: format!("endpoint returned status {status}"),
            }));
        }

        let wire: WireResponse = response
            .json()
            .map_err(|e| AttemptError::Fatal(Error::ProtocolError {
                detail: e.to_string(),
            }))?;
        let Some(choice) = wire.choices.into_iter().next() else {
            return Err(AttemptError::Fatal(Error::ProtocolError {
                detail: "response has no choices".into(),
            }));
        };
        Ok(BackendReply {
            text: choice.message.content,
            usage: wire.usage.map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }),
        })
    }
}

impl Backend for RemoteBackend {
    fn complete(&self, request: &ChatRequest, _digest: &str) -> Result<BackendReply> {
        let mut rate_limited = false;
        let mut last_detail = String::new();
        for attempt in 0..self.retry.max_attempts {
            match self.attempt(request) {
                Ok(reply) => return Ok(reply),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::RateLimited) => {
                    rate_limited = true;
                    last_detail = "rate limited".into();
                }
                Err(AttemptError::Transient(detail)) => {
                    rate_limited = false;
                    last_detail = detail;
                }
            }
            if attempt + 1 < self.retry.max_attempts {
                std::thread::sleep(self.retry.delay(attempt));
            }
        }
        if rate_limited {
            Err(Error::RateLimitedAfterRetries {
                attempts: self.retry.max_attempts,
            })
        } else {
            Err(Error::NetworkUnreachable {
                attempts: self.retry.max_attempts,
                detail: last_detail,
            })
        }
    }

    fn name(&self) -> &'static str {
        "remote"
    }
}

// ---------------------------------------------------------------------------
// recording

/// Wraps any backend and appends every (digest, response) pair it observes to
/// a JSONL fixture file. Duplicate digests are written once.
pub struct RecordingBackend {
    inner: Box<dyn Backend>,
    state: Mutex<RecorderState>,
    path: PathBuf,
}

struct RecorderState {
    file: fs::File,
    seen: std::collections::HashSet<String>,
}

impl RecordingBackend {
    pub fn new(inner: Box<dyn Backend>, fixture_path: &Path) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        if fixture_path.exists() {
            for digest in load_fixtures(fixture_path)?.into_keys() {
                seen.insert(digest);
            }
        }
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(fixture_path)
            .map_err(|e| Error::io(fixture_path, e))?;
        Ok(RecordingBackend {
            inner,
            state: Mutex::new(RecorderState { file, seen }),
            path: fixture_path.to_path_buf(),
        })
    }
}

impl Backend for RecordingBackend {
    fn complete(&self, request: &ChatRequest, digest: &str) -> Result<BackendReply> {
        let reply = self.inner.complete(request, digest)?;
        let mut state = self.state.lock().expect("recorder lock");
        if state.seen.insert(digest.to_string()) {
            let record = FixtureRecord {
                digest: digest.to_string(),
                response: reply.text.clone(),
            };
            let line = serde_json::to_string(&record).expect("fixture serializes");
            writeln!(state.file, "{line}").map_err(|e| Error::io(&self.path, e))?;
            state.file.flush().map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(reply)
    }

    fn name(&self) -> &'static str {
        "recording"
    }
}
