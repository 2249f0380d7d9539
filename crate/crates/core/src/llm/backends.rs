//! Completion backends: live HTTP, cassette replay, and scripted mock.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, LlmError, PromptRole, Usage};

/// Raw completion plus token usage, before parsing.
#[derive(Debug, Clone)]
pub struct BackendResponse {
    pub raw: String,
    pub usage: Option<Usage>,
}

/// A source of chat completions. Implementations must be safe for concurrent
/// `complete` calls.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<BackendResponse, LlmError>;
    fn name(&self) -> String;
}

// ---------------------------------------------------------------------------
// Scripted mock
// ---------------------------------------------------------------------------

/// One mock rule: matchers plus the canned response. Rules are evaluated in
/// order; `times` bounds how often a rule may fire before falling through.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<PromptRole>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub user_contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<u64>,
    pub response: String,
}

/// Deterministic scripted backend driven by an ordered rule list.
pub struct MockBackend {
    rules: Vec<MockRule>,
    fired: Mutex<Vec<u64>>,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Self {
        let fired = Mutex::new(vec![0; rules.len()]);
        MockBackend { rules, fired }
    }

    /// Loads a declarative script: a JSON array of rules.
    pub fn from_script_file(path: &Path) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path).map_err(|e| LlmError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Self::from_script_str(&text)
    }

    pub fn from_script_str(text: &str) -> Result<Self, LlmError> {
        let rules: Vec<MockRule> = serde_json::from_str(text).map_err(|e| LlmError::Provider {
            detail: format!("invalid mock script: {e}"),
        })?;
        Ok(Self::new(rules))
    }

    /// Convenience rule: match a role and respond with a fixed payload.
    pub fn rule(role: PromptRole, response: impl Into<String>) -> MockRule {
        MockRule {
            role: Some(role),
            user_contains: Vec::new(),
            times: None,
            response: response.into(),
        }
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<BackendResponse, LlmError> {
        let mut fired = self.fired.lock().expect("mock lock");
        for (i, rule) in self.rules.iter().enumerate() {
            if let Some(role) = rule.role {
                if role != request.role {
                    continue;
                }
            }
            if !rule.user_contains.iter().all(|s| request.user.contains(s)) {
                continue;
            }
            if let Some(times) = rule.times {
                if fired[i] >= times {
                    continue;
                }
            }
            fired[i] += 1;
            return Ok(BackendResponse {
                raw: rule.response.clone(),
                usage: None,
            });
        }
        Err(LlmError::ScriptMiss {
            role: request.role,
            detail: "no mock rule matches the request".into(),
        })
    }

    fn name(&self) -> String {
        format!("mock:{} rules", self.rules.len())
    }
}

// ---------------------------------------------------------------------------
// Cassette record/replay
// ---------------------------------------------------------------------------

/// The request fields that participate in the replay digest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CassetteRequest {
    pub role: PromptRole,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl From<&ChatRequest> for CassetteRequest {
    fn from(req: &ChatRequest) -> Self {
        CassetteRequest {
            role: req.role,
            system: req.system.clone(),
            user: req.user.clone(),
            temperature: req.sampling.temperature,
            max_tokens: req.sampling.max_tokens,
        }
    }
}

impl CassetteRequest {
    pub fn to_chat_request(&self) -> ChatRequest {
        ChatRequest {
            role: self.role,
            system: self.system.clone(),
            user: self.user.clone(),
            sampling: super::Sampling {
                temperature: self.temperature,
                max_tokens: self.max_tokens,
            },
        }
    }
}

/// One recorded exchange.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub digest: String,
    pub request: CassetteRequest,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    pub timestamp: String,
}

/// Replays recorded responses keyed by request digest. Identical requests
/// (temperature-sampled repeats) are replayed in recorded order; a novel
/// digest or an exhausted queue is a cassette miss, never a network call.
pub struct ReplayBackend {
    path: PathBuf,
    queues: Mutex<HashMap<String, std::collections::VecDeque<CassetteEntry>>>,
    /// Digest of the whole cassette file, for provenance.
    file_digest: String,
}

impl ReplayBackend {
    pub fn open(path: &Path) -> Result<Self, LlmError> {
        let bytes = fs::read(path).map_err(|e| LlmError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let file_digest = crate::content_hash(&bytes);
        let reader = BufReader::new(&bytes[..]);
        let mut queues: HashMap<String, std::collections::VecDeque<CassetteEntry>> = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| LlmError::Io {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry =
                serde_json::from_str(&line).map_err(|e| LlmError::Provider {
                    detail: format!("cassette {} line {}: {e}", path.display(), idx + 1),
                })?;
            let expected = super::request_digest(&entry.request.to_chat_request());
            if expected != entry.digest {
                return Err(LlmError::Provider {
                    detail: format!(
                        "cassette {} line {}: stored digest {} does not match request ({expected})",
                        path.display(),
                        idx + 1,
                        entry.digest
                    ),
                });
            }
            queues
                .entry(entry.digest.clone())
                .or_default()
                .push_back(entry);
        }
        Ok(ReplayBackend {
            path: path.to_path_buf(),
            queues: Mutex::new(queues),
            file_digest,
        })
    }

    pub fn file_digest(&self) -> &str {
        &self.file_digest
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<BackendResponse, LlmError> {
        let digest = super::request_digest(request);
        let mut queues = self.queues.lock().expect("cassette lock");
        match queues.get_mut(&digest).and_then(|q| q.pop_front()) {
            Some(entry) => Ok(BackendResponse {
                raw: entry.response,
                usage: entry.usage,
            }),
            None => Err(LlmError::CassetteMiss {
                digest,
                role: request.role,
                path: self.path.clone(),
            }),
        }
    }

    fn name(&self) -> String {
        format!("replay:{}", self.file_digest)
    }
}

/// Appends exchanges to a cassette file as they happen.
pub struct CassetteWriter {
    path: PathBuf,
    file: Mutex<fs::File>,
}

impl CassetteWriter {
    pub fn create(path: &Path) -> Result<Self, LlmError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| LlmError::Io {
                path: parent.to_path_buf(),
                detail: e.to_string(),
            })?;
        }
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Io {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
        Ok(CassetteWriter {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn record(
        &self,
        request: &ChatRequest,
        response: &BackendResponse,
    ) -> Result<(), LlmError> {
        let entry = CassetteEntry {
            digest: super::request_digest(request),
            request: request.into(),
            response: response.raw.clone(),
            usage: response.usage.clone(),
            timestamp: unix_timestamp(),
        };
        let line = serde_json::to_string(&entry).expect("cassette entry serializes");
        let mut file = self.file.lock().expect("cassette writer lock");
        writeln!(file, "{line}").map_err(|e| LlmError::Io {
            path: self.path.clone(),
            detail: e.to_string(),
        })
    }
}

pub(crate) fn unix_timestamp() -> String {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_else(|_| "0".into())
}

// ---------------------------------------------------------------------------
// Live HTTP
// ---------------------------------------------------------------------------

/// Provider settings for the live backend. The API key is read from an
/// environment variable, never from config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_max_attempts() -> u32 {
    3
}

/// Chat-completions HTTP backend with retry-on-transient (exponential
/// backoff, three attempts by default).
pub struct HttpBackend {
    config: HttpConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| LlmError::Provider {
            detail: format!("environment variable {} is not set", config.api_key_env),
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Provider {
                detail: format!("cannot build HTTP client: {e}"),
            })?;
        Ok(HttpBackend {
            config,
            api_key,
            client,
        })
    }

    fn attempt(&self, request: &ChatRequest) -> Result<BackendResponse, (bool, String)> {
        let mut messages = Vec::new();
        if !request.system.is_empty() {
            messages.push(serde_json::json!({"role": "system", "content": request.system}));
        }
        messages.push(serde_json::json!({"role": "user", "content": request.user}));
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.sampling.temperature,
            "max_tokens": request.sampling.max_tokens,
        });
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let resp = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| (true, format!("transport error: {e}")))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err((true, format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err((false, format!("HTTP {status}: {body}")));
        }
        let payload: serde_json::Value = resp
            .json()
            .map_err(|e| (false, format!("invalid provider JSON: {e}")))?;
        let raw = payload["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| {
                (
                    false,
                    "provider response lacks choices[0].message.content".to_string(),
                )
            })?
            .to_string();
        let usage = payload.get("usage").map(|u| Usage {
            prompt_tokens: u["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: u["completion_tokens"].as_u64().unwrap_or(0),
        });
        Ok(BackendResponse { raw, usage })
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<BackendResponse, LlmError> {
        let mut last = String::new();
        for attempt in 0..self.config.max_attempts {
            match self.attempt(request) {
                Ok(resp) => return Ok(resp),
                Err((retryable, detail)) => {
                    last = detail;
                    if !retryable {
                        break;
                    }
                    if attempt + 1 < self.config.max_attempts {
                        std::thread::sleep(Duration::from_millis(100 << attempt));
                    }
                }
            }
        }
        Err(LlmError::Provider { detail: last })
    }

    fn name(&self) -> String {
        format!("http:{}", self.config.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{render, Slots};

    fn request(role: PromptRole, program: &str) -> ChatRequest {
        let slots = match role {
            PromptRole::OptimizePair => Slots::new()
                .text("slow_example", "s")
                .text("fast_example", "f")
                .text("program", program),
            _ => Slots::new().text("program", program),
        };
        render(role, slots).unwrap()
    }

    #[test]
    fn mock_rules_match_in_order_with_times() {
        let backend = MockBackend::new(vec![
            MockRule {
                role: Some(PromptRole::Context),
                user_contains: vec![],
                times: Some(1),
                response: "first".into(),
            },
            MockRule {
                role: Some(PromptRole::Context),
                user_contains: vec![],
                times: None,
                response: "rest".into(),
            },
        ]);
        let req = request(PromptRole::Context, "P");
        assert_eq!(backend.complete(&req).unwrap().raw, "first");
        assert_eq!(backend.complete(&req).unwrap().raw, "rest");
        assert_eq!(backend.complete(&req).unwrap().raw, "rest");
    }

    #[test]
    fn mock_substring_matcher_filters() {
        let backend = MockBackend::new(vec![MockRule {
            role: None,
            user_contains: vec!["fib".into()],
            times: None,
            response: "ok".into(),
        }]);
        assert!(backend
            .complete(&request(PromptRole::Context, "fib(n)"))
            .is_ok());
        assert!(matches!(
            backend.complete(&request(PromptRole::Context, "sum")),
            Err(LlmError::ScriptMiss { .. })
        ));
    }

    #[test]
    fn cassette_round_trip_and_fifo_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cassette.jsonl");
        let writer = CassetteWriter::create(&path).unwrap();
        let req = request(PromptRole::Context, "P");
        writer
            .record(
                &req,
                &BackendResponse {
                    raw: "one".into(),
                    usage: None,
                },
            )
            .unwrap();
        writer
            .record(
                &req,
                &BackendResponse {
                    raw: "two".into(),
                    usage: None,
                },
            )
            .unwrap();
        drop(writer);

        let replay = ReplayBackend::open(&path).unwrap();
        assert_eq!(replay.complete(&req).unwrap().raw, "one");
        assert_eq!(replay.complete(&req).unwrap().raw, "two");
        assert!(matches!(
            replay.complete(&req),
            Err(LlmError::CassetteMiss { .. })
        ));
    }

    #[test]
    fn cassette_miss_on_novel_request() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cassette.jsonl");
        let writer = CassetteWriter::create(&path).unwrap();
        writer
            .record(
                &request(PromptRole::Context, "P"),
                &BackendResponse {
                    raw: "x".into(),
                    usage: None,
                },
            )
            .unwrap();
        drop(writer);
        let replay = ReplayBackend::open(&path).unwrap();
        assert!(matches!(
            replay.complete(&request(PromptRole::Context, "Q")),
            Err(LlmError::CassetteMiss { .. })
        ));
    }

    #[test]
    fn corrupted_cassette_digest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cassette.jsonl");
        let req = request(PromptRole::Context, "P");
        let mut entry = CassetteEntry {
            digest: "not-the-digest".into(),
            request: (&req).into(),
            response: "x".into(),
            usage: None,
            timestamp: "0".into(),
        };
        entry.digest = "deadbeef".into();
        fs::write(
            &path,
            format!("{}\n", serde_json::to_string(&entry).unwrap()),
        )
        .unwrap();
        assert!(ReplayBackend::open(&path).is_err());
    }
}
