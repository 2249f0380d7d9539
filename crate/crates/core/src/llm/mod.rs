//! LLM gateway: template rendering, completion backends, response parsing.

mod backends;
mod parse;
mod templates;

pub use backends::{
    BackendResponse, CassetteEntry, CassetteRequest, CassetteWriter, CompletionBackend,
    HttpBackend, HttpConfig, MockBackend, MockRule, ReplayBackend,
};
pub use parse::{
    extract_code, extract_json_object, parse_edit_list, parse_field, parse_field_strict,
    strip_fences,
};
pub use templates::{render, PromptRole, SlotValue, Slots};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("template error for role {role}: {detail}")]
    Template { role: PromptRole, detail: String },
    #[error("parse error: {detail}")]
    Parse { detail: String, raw: String },
    #[error("cassette miss in {path}: no recorded response for {role} request {digest}")]
    CassetteMiss {
        digest: String,
        role: PromptRole,
        path: PathBuf,
    },
    #[error("mock script miss for role {role}: {detail}")]
    ScriptMiss { role: PromptRole, detail: String },
    #[error("provider error: {detail}")]
    Provider { detail: String },
    #[error("gateway budget of {max_calls} calls exhausted")]
    Budget { max_calls: u64 },
    #[error("I/O error at {path}: {detail}")]
    Io { path: PathBuf, detail: String },
}

/// Sampling parameters sent with a request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
}

/// A fully rendered request: no unfilled placeholders remain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: PromptRole,
    pub system: String,
    pub user: String,
    pub sampling: Sampling,
}

impl ChatRequest {
    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn digest(&self) -> String {
        request_digest(self)
    }
}

/// Stable digest of (role, system, user, sampling); cassettes key on it, so
/// they survive refactors that do not change prompts.
pub fn request_digest(request: &ChatRequest) -> String {
    let mut canonical = String::new();
    canonical.push_str("v1\u{0}");
    canonical.push_str(request.role.name());
    canonical.push('\u{0}');
    canonical.push_str(&request.system);
    canonical.push('\u{0}');
    canonical.push_str(&request.user);
    canonical.push('\u{0}');
    canonical.push_str(&format!(
        "{}\u{0}{}",
        request.sampling.temperature, request.sampling.max_tokens
    ));
    crate::content_hash(canonical.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A completion with its lenient structured parse, when one exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub raw: String,
    /// Present iff the raw text contains a valid JSON object after
    /// fence-stripping.
    pub parsed: Option<BTreeMap<String, String>>,
    pub usage: Option<Usage>,
    /// Digest of the request that produced this response.
    pub request_digest: String,
}

impl LlmResponse {
    pub fn from_raw(raw: String, usage: Option<Usage>, request_digest: String) -> Self {
        let parsed = parse::extract_json_object(&raw).map(|m| parse::object_to_map(&m));
        LlmResponse {
            raw,
            parsed,
            usage,
            request_digest,
        }
    }
}

/// Outcome tag recorded per gateway call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallOutcome {
    Ok,
    Error,
    BudgetRejected,
}

/// One transcript line; the transcript has exactly one entry per
/// [`Gateway::complete`] call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub role: PromptRole,
    pub digest: String,
    pub outcome: CallOutcome,
}

/// Front door for all completions: wraps a backend with a transcript log,
/// optional cassette recording, and an atomic call budget.
pub struct Gateway {
    backend: Box<dyn CompletionBackend>,
    transcript: Mutex<Vec<TranscriptEntry>>,
    transcript_sink: Option<Mutex<std::io::BufWriter<fs::File>>>,
    recorder: Option<CassetteWriter>,
    max_calls: Option<u64>,
    content_calls: AtomicU64,
    seq: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Box<dyn CompletionBackend>) -> Self {
        Gateway {
            backend,
            transcript: Mutex::new(Vec::new()),
            transcript_sink: None,
            recorder: None,
            max_calls: None,
            content_calls: AtomicU64::new(0),
            seq: AtomicU64::new(0),
        }
    }

    /// Caps the number of calls that return content.
    pub fn with_max_calls(mut self, max_calls: u64) -> Self {
        self.max_calls = Some(max_calls);
        self
    }

    /// Mirrors the transcript to a line-delimited file.
    pub fn with_transcript_file(mut self, path: &Path) -> Result<Self, LlmError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| LlmError::Io {
                path: parent.to_path_buf(),
                detail: e.to_string(),
            })?;
        }
        let file = fs::File::create(path).map_err(|e| LlmError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        self.transcript_sink = Some(Mutex::new(std::io::BufWriter::new(file)));
        Ok(self)
    }

    /// Records every successful exchange to a cassette for later replay.
    pub fn with_recorder(mut self, recorder: CassetteWriter) -> Self {
        self.recorder = Some(recorder);
        self
    }

    pub fn backend_name(&self) -> String {
        self.backend.name()
    }

    fn log(&self, role: PromptRole, digest: &str, outcome: CallOutcome) {
        let entry = TranscriptEntry {
            seq: self.seq.fetch_add(1, Ordering::SeqCst),
            role,
            digest: digest.to_string(),
            outcome,
        };
        if let Some(sink) = &self.transcript_sink {
            let mut sink = sink.lock().expect("transcript sink lock");
            let line = serde_json::to_string(&entry).expect("transcript entry serializes");
            let _ = writeln!(sink, "{line}");
            let _ = sink.flush();
        }
        self.transcript.lock().expect("transcript lock").push(entry);
    }

    /// Sends a request through the backend. Every call is appended to the
    /// transcript; the budget counts only attempts that returned content.
    pub fn complete(&self, request: &ChatRequest) -> Result<LlmResponse, LlmError> {
        let digest = request_digest(request);

        if let Some(max) = self.max_calls {
            let reserved =
                self.content_calls
                    .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| {
                        if n < max {
                            Some(n + 1)
                        } else {
                            None
                        }
                    });
            if reserved.is_err() {
                self.log(request.role, &digest, CallOutcome::BudgetRejected);
                return Err(LlmError::Budget { max_calls: max });
            }
        } else {
            self.content_calls.fetch_add(1, Ordering::SeqCst);
        }

        match self.backend.complete(request) {
            Ok(response) => {
                if let Some(recorder) = &self.recorder {
                    recorder.record(request, &response)?;
                }
                self.log(request.role, &digest, CallOutcome::Ok);
                Ok(LlmResponse::from_raw(response.raw, response.usage, digest))
            }
            Err(err) => {
                // The attempt returned no content; refund its budget slot.
                self.content_calls.fetch_sub(1, Ordering::SeqCst);
                self.log(request.role, &digest, CallOutcome::Error);
                Err(err)
            }
        }
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.transcript.lock().expect("transcript lock").clone()
    }

    pub fn calls_by_role(&self, role: PromptRole) -> usize {
        self.transcript
            .lock()
            .expect("transcript lock")
            .iter()
            .filter(|e| e.role == role && e.outcome == CallOutcome::Ok)
            .count()
    }

    /// Calls that returned content so far.
    pub fn content_calls(&self) -> u64 {
        self.content_calls.load(Ordering::SeqCst)
    }
}
