//! Contextual and code retrieval over an exact nearest-neighbor index.
//!
//! Contextual mode embeds an LLM-generated one-sentence description of the
//! program; code mode embeds the source text itself. The index is a full-scan
//! exact top-k (bounded max-heap) — the corpus is a few thousand vectors, and
//! exactness is what makes the oracle tests possible.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::aegis::AtomicEdit;
use crate::content_hash;
use crate::corpus::{Program, ProgramPair};
use crate::llm::{self, Gateway, LlmError, PromptRole, Slots};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("vector contains a non-finite value")]
    NonFiniteVector,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index build error: {0}")]
    Build(String),
    #[error("embedding backend error: {0}")]
    Embedding(String),
    #[error("description failed: {0}")]
    Describe(#[from] LlmError),
    #[error("I/O error at {path}: {detail}")]
    Io { path: PathBuf, detail: String },
}

/// Which text an index embeds: generated descriptions or raw source. One mode
/// per index; mixing is an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    Contextual,
    Code,
}

impl RetrievalMode {
    pub fn name(&self) -> &'static str {
        match self {
            RetrievalMode::Contextual => "contextual",
            RetrievalMode::Code => "code",
        }
    }
}

/// L2 distance between equal-dimension vectors.
pub fn distance(a: &[f32], b: &[f32]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let mut sum = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = (*x as f64) - (*y as f64);
        sum += d * d;
    }
    Ok(sum.sqrt())
}

// ---------------------------------------------------------------------------
// Embedding backends
// ---------------------------------------------------------------------------

/// Text embedding backend. Deterministic for the hash and replay variants.
pub trait EmbedText: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError>;
    /// Identity string folded into cache keys so caches from different
    /// backends never collide.
    fn id(&self) -> String;
}

impl EmbedText for Box<dyn EmbedText> {
    fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError> {
        (**self).embed(text)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic token-hashing embedder: tokens are hashed into signed
/// buckets and the result is L2-normalized, so texts sharing vocabulary land
/// close together. Platform-independent by construction.
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "embedding dimension must be positive");
        HashEmbedder { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl EmbedText for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError> {
        if text.is_empty() {
            return Err(RetrievalError::EmptyText);
        }
        let mut vector = vec![0.0f32; self.dim];
        for token in text
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let lowered = token.to_ascii_lowercase();
            let h = fnv1a64(lowered.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
            vector[bucket] += sign;
        }
        let norm = vector
            .iter()
            .map(|v| (*v as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        if norm > 0.0 {
            for v in &mut vector {
                *v = (*v as f64 / norm) as f32;
            }
        }
        Ok(vector)
    }

    fn id(&self) -> String {
        format!("hash:{}", self.dim)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingRecord {
    digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    vector: Vec<f32>,
}

fn embedding_digest(text: &str) -> String {
    content_hash(format!("embed\u{0}{text}").as_bytes())
}

/// Replays recorded embedding vectors; a novel text is an error, never a
/// network call.
pub struct ReplayEmbedder {
    path: PathBuf,
    map: std::collections::HashMap<String, Vec<f32>>,
}

impl ReplayEmbedder {
    pub fn open(path: &Path) -> Result<Self, RetrievalError> {
        let file = fs::File::open(path).map_err(|e| RetrievalError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let mut map = std::collections::HashMap::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| RetrievalError::Io {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| {
                RetrievalError::Embedding(format!(
                    "invalid embedding record at {}:{}: {e}",
                    path.display(),
                    idx + 1
                ))
            })?;
            map.insert(rec.digest, rec.vector);
        }
        Ok(ReplayEmbedder {
            path: path.to_path_buf(),
            map,
        })
    }
}

impl EmbedText for ReplayEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError> {
        if text.is_empty() {
            return Err(RetrievalError::EmptyText);
        }
        self.map
            .get(&embedding_digest(text))
            .cloned()
            .ok_or_else(|| {
                RetrievalError::Embedding(format!(
                    "no recorded vector in {} for the requested text",
                    self.path.display()
                ))
            })
    }

    fn id(&self) -> String {
        "replay".into()
    }
}

/// Records every embedding produced by the inner backend to a cassette file.
pub struct RecordingEmbedder<E> {
    inner: E,
    path: PathBuf,
    file: std::sync::Mutex<fs::File>,
}

impl<E: EmbedText> RecordingEmbedder<E> {
    pub fn create(inner: E, path: &Path) -> Result<Self, RetrievalError> {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| RetrievalError::Io {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
        Ok(RecordingEmbedder {
            inner,
            path: path.to_path_buf(),
            file: std::sync::Mutex::new(file),
        })
    }
}

impl<E: EmbedText> EmbedText for RecordingEmbedder<E> {
    fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError> {
        let vector = self.inner.embed(text)?;
        let rec = EmbeddingRecord {
            digest: embedding_digest(text),
            text: Some(text.to_string()),
            vector: vector.clone(),
        };
        let line = serde_json::to_string(&rec).expect("embedding record serializes");
        let mut file = self.file.lock().expect("recorder lock");
        writeln!(file, "{line}").map_err(|e| RetrievalError::Io {
            path: self.path.clone(),
            detail: e.to_string(),
        })?;
        Ok(vector)
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}

/// Embeddings-endpoint HTTP backend (common `/embeddings` JSON shape).
pub struct HttpEmbedder {
    base_url: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, model: &str, api_key_env: &str) -> Result<Self, RetrievalError> {
        let api_key = std::env::var(api_key_env).map_err(|_| {
            RetrievalError::Embedding(format!("environment variable {api_key_env} is not set"))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .build()
            .map_err(|e| RetrievalError::Embedding(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpEmbedder {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            client,
        })
    }
}

impl EmbedText for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError> {
        if text.is_empty() {
            return Err(RetrievalError::EmptyText);
        }
        let mut last = String::new();
        for attempt in 0..3 {
            let result = self
                .client
                .post(format!("{}/embeddings", self.base_url))
                .bearer_auth(&self.api_key)
                .json(&serde_json::json!({"model": self.model, "input": text}))
                .send();
            match result {
                Ok(resp) if resp.status().is_success() => {
                    let payload: serde_json::Value = resp.json().map_err(|e| {
                        RetrievalError::Embedding(format!("invalid embeddings JSON: {e}"))
                    })?;
                    let values = payload["data"][0]["embedding"].as_array().ok_or_else(|| {
                        RetrievalError::Embedding("response lacks data[0].embedding".into())
                    })?;
                    return Ok(values
                        .iter()
                        .map(|v| v.as_f64().unwrap_or(f64::NAN) as f32)
                        .collect());
                }
                Ok(resp) => {
                    let status = resp.status();
                    last = format!("HTTP {status}");
                    if !(status.as_u16() == 429 || status.is_server_error()) {
                        break;
                    }
                }
                Err(e) => last = format!("transport error: {e}"),
            }
            if attempt < 2 {
                std::thread::sleep(std::time::Duration::from_millis(100 << attempt));
            }
        }
        Err(RetrievalError::Embedding(last))
    }

    fn id(&self) -> String {
        format!("http:{}", self.model)
    }
}

/// Counts calls that reach the inner backend; cache-hit assertions in tests
/// and CLI summaries read it.
pub struct CountingEmbedder<E> {
    inner: E,
    calls: AtomicU64,
}

impl<E: EmbedText> CountingEmbedder<E> {
    pub fn new(inner: E) -> Self {
        CountingEmbedder {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<E: EmbedText> EmbedText for CountingEmbedder<E> {
    fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(text)
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}

// ---------------------------------------------------------------------------
// Content-addressed disk cache
// ---------------------------------------------------------------------------

/// Write-then-rename disk cache for descriptions and embedding vectors.
pub struct DiskCache {
    root: PathBuf,
}

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DiskCache { root: root.into() }
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2.min(key.len())]).join(key)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        fs::read_to_string(self.path_for(key)).ok()
    }

    pub fn put(&self, key: &str, value: &str) -> Result<(), RetrievalError> {
        let path = self.path_for(key);
        let parent = path.parent().expect("cache path has a parent");
        fs::create_dir_all(parent).map_err(|e| RetrievalError::Io {
            path: parent.to_path_buf(),
            detail: e.to_string(),
        })?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, value).map_err(|e| RetrievalError::Io {
            path: tmp.clone(),
            detail: e.to_string(),
        })?;
        fs::rename(&tmp, &path).map_err(|e| RetrievalError::Io {
            path,
            detail: e.to_string(),
        })
    }
}

// ---------------------------------------------------------------------------
// Descriptions
// ---------------------------------------------------------------------------

/// A program description plus the gateway digest of the call that produced
/// it (absent on cache hits).
pub struct Described {
    pub text: String,
    pub gateway_digest: Option<String>,
}

/// Generates the one-sentence algorithm description of a program, cached by
/// program content hash.
pub fn describe(
    program: &Program,
    gateway: &Gateway,
    cache: Option<&DiskCache>,
) -> Result<Described, RetrievalError> {
    let key = content_hash(format!("describe\u{0}{}", program.source).as_bytes());
    if let Some(cache) = cache {
        if let Some(text) = cache.get(&key) {
            return Ok(Described {
                text,
                gateway_digest: None,
            });
        }
    }
    let request = llm::render(
        PromptRole::Context,
        Slots::new().text("program", program.source.clone()),
    )?;
    let response = gateway.complete(&request)?;
    let text = llm::parse_field(&response, "algorithm")?;
    if let Some(cache) = cache {
        cache.put(&key, &text)?;
    }
    Ok(Described {
        text,
        gateway_digest: Some(response.request_digest),
    })
}

/// Embeds through the disk cache when one is provided.
pub fn embed_cached(
    embedder: &dyn EmbedText,
    cache: Option<&DiskCache>,
    text: &str,
) -> Result<Vec<f32>, RetrievalError> {
    let key = content_hash(format!("embed\u{0}{}\u{0}{text}", embedder.id()).as_bytes());
    if let Some(cache) = cache {
        if let Some(body) = cache.get(&key) {
            if let Ok(vector) = serde_json::from_str::<Vec<f32>>(&body) {
                return Ok(vector);
            }
        }
    }
    let vector = embedder.embed(text)?;
    if let Some(cache) = cache {
        cache.put(
            &key,
            &serde_json::to_string(&vector).expect("vector serializes"),
        )?;
    }
    Ok(vector)
}

// ---------------------------------------------------------------------------
// Index
// ---------------------------------------------------------------------------

/// Payload kinds an index can carry.
pub trait IndexPayload: Serialize + DeserializeOwned + Clone {
    const KIND: &'static str;
}

impl IndexPayload for ProgramPair {
    const KIND: &'static str = "pair";
}

impl IndexPayload for AtomicEdit {
    const KIND: &'static str = "atomic_edit";
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexEntry<P> {
    pub key: String,
    pub payload: P,
    pub vector: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

/// Immutable exact nearest-neighbor index.
#[derive(Debug, Clone)]
pub struct Index<P> {
    mode: RetrievalMode,
    dim: usize,
    entries: Vec<IndexEntry<P>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    version: u32,
    mode: RetrievalMode,
    dim: usize,
    count: usize,
    payload: String,
}

impl<P: IndexPayload> Index<P> {
    /// Builds an index from prepared entries, validating dimensions, finite
    /// values, and key uniqueness.
    pub fn from_entries(
        mode: RetrievalMode,
        entries: Vec<IndexEntry<P>>,
    ) -> Result<Self, RetrievalError> {
        if entries.is_empty() {
            return Err(RetrievalError::Build("no entries".into()));
        }
        let dim = entries[0].vector.len();
        if dim == 0 {
            return Err(RetrievalError::Build("zero-dimension vectors".into()));
        }
        let mut keys = BTreeSet::new();
        for entry in &entries {
            if entry.vector.len() != dim {
                return Err(RetrievalError::DimMismatch {
                    expected: dim,
                    got: entry.vector.len(),
                });
            }
            if entry.vector.iter().any(|v| !v.is_finite()) {
                return Err(RetrievalError::NonFiniteVector);
            }
            if !keys.insert(entry.key.clone()) {
                return Err(RetrievalError::Build(format!(
                    "duplicate entry key {}",
                    entry.key
                )));
            }
        }
        Ok(Index { mode, dim, entries })
    }

    pub fn mode(&self) -> RetrievalMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry<P>] {
        &self.entries
    }

    /// The k entries nearest to the query among those whose key is not
    /// excluded, ascending by distance with ties broken by key order. Fewer
    /// than k eligible entries returns all of them.
    pub fn query_top_k(
        &self,
        query: &[f32],
        k: usize,
        exclusions: &BTreeSet<String>,
    ) -> Result<Vec<&IndexEntry<P>>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if query.len() != self.dim {
            return Err(RetrievalError::DimMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFiniteVector);
        }

        struct HeapItem<'i> {
            dist: f64,
            key: &'i str,
            idx: usize,
        }
        impl PartialEq for HeapItem<'_> {
            fn eq(&self, other: &Self) -> bool {
                self.dist == other.dist && self.key == other.key
            }
        }
        impl Eq for HeapItem<'_> {}
        impl PartialOrd for HeapItem<'_> {
            fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for HeapItem<'_> {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                self.dist
                    .total_cmp(&other.dist)
                    .then_with(|| self.key.cmp(other.key))
            }
        }

        let mut heap: std::collections::BinaryHeap<HeapItem> =
            std::collections::BinaryHeap::with_capacity(k + 1);
        for (idx, entry) in self.entries.iter().enumerate() {
            if exclusions.contains(&entry.key) {
                continue;
            }
            let dist = distance(query, &entry.vector)?;
            let item = HeapItem {
                dist,
                key: &entry.key,
                idx,
            };
            if heap.len() < k {
                heap.push(item);
            } else if let Some(worst) = heap.peek() {
                if item.cmp(worst) == std::cmp::Ordering::Less {
                    heap.pop();
                    heap.push(item);
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|item| &self.entries[item.idx])
            .collect())
    }

    /// Persists the index with its embeddings so rebuilds need no backend
    /// calls. Write-then-rename.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| RetrievalError::Io {
                    path: parent.to_path_buf(),
                    detail: e.to_string(),
                })?;
            }
        }
        let tmp = path.with_extension("tmp");
        {
            let mut file = fs::File::create(&tmp).map_err(|e| RetrievalError::Io {
                path: tmp.clone(),
                detail: e.to_string(),
            })?;
            let header = IndexHeader {
                format: "rasopt-index".into(),
                version: 1,
                mode: self.mode,
                dim: self.dim,
                count: self.entries.len(),
                payload: P::KIND.into(),
            };
            writeln!(
                file,
                "{}",
                serde_json::to_string(&header).expect("header serializes")
            )
            .map_err(|e| RetrievalError::Io {
                path: tmp.clone(),
                detail: e.to_string(),
            })?;
            for entry in &self.entries {
                writeln!(
                    file,
                    "{}",
                    serde_json::to_string(entry).expect("entry serializes")
                )
                .map_err(|e| RetrievalError::Io {
                    path: tmp.clone(),
                    detail: e.to_string(),
                })?;
            }
        }
        fs::rename(&tmp, path).map_err(|e| RetrievalError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let file = fs::File::open(path).map_err(|e| RetrievalError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| RetrievalError::Build(format!("{}: empty index file", path.display())))?
            .map_err(|e| RetrievalError::Io {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
        let header: IndexHeader = serde_json::from_str(&header_line)
            .map_err(|e| RetrievalError::Build(format!("{}: bad header: {e}", path.display())))?;
        if header.format != "rasopt-index" {
            return Err(RetrievalError::Build(format!(
                "{}: not an index file",
                path.display()
            )));
        }
        if header.payload != P::KIND {
            return Err(RetrievalError::Build(format!(
                "{}: payload kind is {}, expected {}",
                path.display(),
                header.payload,
                P::KIND
            )));
        }
        let mut entries = Vec::with_capacity(header.count);
        for line in lines {
            let line = line.map_err(|e| RetrievalError::Io {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: IndexEntry<P> = serde_json::from_str(&line).map_err(|e| {
                RetrievalError::Build(format!("{}: bad entry: {e}", path.display()))
            })?;
            entries.push(entry);
        }
        if entries.len() != header.count {
            return Err(RetrievalError::Build(format!(
                "{}: header says {} entries, file has {}",
                path.display(),
                header.count,
                entries.len()
            )));
        }
        Index::from_entries(header.mode, entries)
    }
}

/// Reads just the payload kind from a persisted index header.
pub fn sniff_payload_kind(path: &Path) -> Result<String, RetrievalError> {
    let file = fs::File::open(path).map_err(|e| RetrievalError::Io {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| RetrievalError::Build(format!("{}: empty index file", path.display())))?
        .map_err(|e| RetrievalError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let header: IndexHeader = serde_json::from_str(&header_line)
        .map_err(|e| RetrievalError::Build(format!("{}: bad header: {e}", path.display())))?;
    Ok(header.payload)
}

/// A loaded index of either payload kind, for callers that only need keys
/// and distances (CLI dispatch, C API).
pub enum AnyIndex {
    Pairs(Index<ProgramPair>),
    Atomic(Index<AtomicEdit>),
}

impl AnyIndex {
    pub fn open(path: &Path) -> Result<Self, RetrievalError> {
        match sniff_payload_kind(path)?.as_str() {
            "pair" => Ok(AnyIndex::Pairs(Index::load(path)?)),
            "atomic_edit" => Ok(AnyIndex::Atomic(Index::load(path)?)),
            other => Err(RetrievalError::Build(format!(
                "unknown index payload kind {other}"
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            AnyIndex::Pairs(i) => i.dim(),
            AnyIndex::Atomic(i) => i.dim(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            AnyIndex::Pairs(i) => i.len(),
            AnyIndex::Atomic(i) => i.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Top-k keys and distances, independent of payload kind.
    pub fn query_keys(
        &self,
        query: &[f32],
        k: usize,
        exclusions: &BTreeSet<String>,
    ) -> Result<Vec<(String, f64)>, RetrievalError> {
        match self {
            AnyIndex::Pairs(i) => i
                .query_top_k(query, k, exclusions)?
                .into_iter()
                .map(|e| Ok((e.key.clone(), distance(query, &e.vector)?)))
                .collect(),
            AnyIndex::Atomic(i) => i
                .query_top_k(query, k, exclusions)?
                .into_iter()
                .map(|e| Ok((e.key.clone(), distance(query, &e.vector)?)))
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Index builders
// ---------------------------------------------------------------------------

/// Outcome of building an index from a corpus: the index plus the gateway
/// digests of any description calls it made.
pub struct BuiltIndex<P> {
    pub index: Index<P>,
    pub gateway_digests: Vec<String>,
}

/// Builds a pair index. Contextual mode embeds the description of each
/// pair's slow program (generated through the gateway, cached); code mode
/// embeds the slow source directly and never touches the Context role.
pub fn index_pairs(
    pairs: &[ProgramPair],
    mode: RetrievalMode,
    gateway: &Gateway,
    embedder: &dyn EmbedText,
    cache: Option<&DiskCache>,
) -> Result<BuiltIndex<ProgramPair>, RetrievalError> {
    let mut entries = Vec::with_capacity(pairs.len());
    let mut digests = Vec::new();
    for pair in pairs {
        let (text, description) = match mode {
            RetrievalMode::Contextual => {
                let described = describe(&pair.slow, gateway, cache)?;
                if let Some(d) = described.gateway_digest {
                    digests.push(d);
                }
                (described.text.clone(), Some(described.text))
            }
            RetrievalMode::Code => (pair.slow.source.clone(), None),
        };
        let vector = embed_cached(embedder, cache, &text)?;
        entries.push(IndexEntry {
            key: pair.key(),
            payload: pair.clone(),
            vector,
            description,
        });
    }
    Ok(BuiltIndex {
        index: Index::from_entries(mode, entries)?,
        gateway_digests: digests,
    })
}

/// Builds the atomic-edit index: entries embed the generalized edit
/// description, sharing the natural-language embedding space with program
/// descriptions. Always contextual.
pub fn index_atomic_edits(
    edits: &[AtomicEdit],
    embedder: &dyn EmbedText,
    cache: Option<&DiskCache>,
) -> Result<Index<AtomicEdit>, RetrievalError> {
    let mut entries = Vec::with_capacity(edits.len());
    for edit in edits {
        let vector = embed_cached(embedder, cache, &edit.description)?;
        entries.push(IndexEntry {
            key: edit.key(),
            payload: edit.clone(),
            vector,
            description: Some(edit.description.clone()),
        });
    }
    Index::from_entries(RetrievalMode::Contextual, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Origin;

    fn pair(key_seed: usize) -> ProgramPair {
        let mk = |suffix: &str| Program {
            source: format!("int main() {{ return {key_seed}; }} // {suffix}"),
            problem_id: format!("p{key_seed}"),
            program_id: format!("{key_seed}-{suffix}"),
            origin: Origin::Corpus,
        };
        ProgramPair {
            slow: mk("slow"),
            fast: mk("fast"),
            recorded_speedup: Some(2.0),
        }
    }

    fn entry(key: &str, vector: Vec<f32>) -> IndexEntry<ProgramPair> {
        IndexEntry {
            key: key.to_string(),
            payload: pair(key.len()),
            vector,
            description: None,
        }
    }

    #[test]
    fn distance_basics() {
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn hash_embedder_is_deterministic_and_rejects_empty() {
        let embedder = HashEmbedder::new(8);
        let a = embedder.embed("a").unwrap();
        let b = embedder.embed("a").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        assert!(matches!(embedder.embed(""), Err(RetrievalError::EmptyText)));
    }

    #[test]
    fn hash_embedder_places_shared_vocabulary_closer() {
        let embedder = HashEmbedder::new(64);
        let a = embedder
            .embed("dynamic programming over prefix sums")
            .unwrap();
        let b = embedder
            .embed("dynamic programming with prefix arrays")
            .unwrap();
        let c = embedder
            .embed("string parsing and regular expressions")
            .unwrap();
        assert!(distance(&a, &b).unwrap() < distance(&a, &c).unwrap());
    }

    #[test]
    fn query_returns_nearest_in_order() {
        let index = Index::from_entries(
            RetrievalMode::Code,
            vec![
                entry("a", vec![1.0, 0.0]),
                entry("b", vec![2.0, 0.0]),
                entry("c", vec![3.0, 0.0]),
            ],
        )
        .unwrap();
        let got = index.query_top_k(&[0.0, 0.0], 2, &BTreeSet::new()).unwrap();
        let keys: Vec<&str> = got.iter().map(|e| e.key.as_str()).collect();
        assert_eq!(keys, vec!["a", "b"]);
    }

    #[test]
    fn query_respects_exclusions() {
        let index = Index::from_entries(
            RetrievalMode::Code,
            vec![
                entry("a", vec![1.0, 0.0]),
                entry("b", vec![2.0, 0.0]),
                entry("c", vec![3.0, 0.0]),
            ],
        )
        .unwrap();
        let excl: BTreeSet<String> = ["a".to_string()].into();
        let got = index.query_top_k(&[0.0, 0.0], 2, &excl).unwrap();
        let keys: Vec<&str> = got.iter().map(|e| e.key.as_str()).collect();
        assert_eq!(keys, vec!["b", "c"]);
    }

    #[test]
    fn query_with_large_k_returns_all_eligible() {
        let index = Index::from_entries(
            RetrievalMode::Code,
            vec![entry("a", vec![1.0]), entry("b", vec![2.0])],
        )
        .unwrap();
        assert_eq!(
            index
                .query_top_k(&[0.0], 10, &BTreeSet::new())
                .unwrap()
                .len(),
            2
        );
    }

    #[test]
    fn ties_break_by_key_order() {
        let index = Index::from_entries(
            RetrievalMode::Code,
            vec![
                entry("zeta", vec![1.0, 0.0]),
                entry("alpha", vec![-1.0, 0.0]),
                entry("mid", vec![0.0, 1.0]),
            ],
        )
        .unwrap();
        let got = index.query_top_k(&[0.0, 0.0], 3, &BTreeSet::new()).unwrap();
        let keys: Vec<&str> = got.iter().map(|e| e.key.as_str()).collect();
        assert_eq!(keys, vec!["alpha", "mid", "zeta"]);
    }

    #[test]
    fn build_rejects_empty_and_mismatched() {
        assert!(Index::<ProgramPair>::from_entries(RetrievalMode::Code, vec![]).is_err());
        assert!(Index::from_entries(
            RetrievalMode::Code,
            vec![entry("a", vec![1.0]), entry("b", vec![1.0, 2.0])],
        )
        .is_err());
        assert!(Index::from_entries(
            RetrievalMode::Code,
            vec![entry("a", vec![1.0]), entry("a", vec![2.0])],
        )
        .is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.jsonl");
        let index = Index::from_entries(
            RetrievalMode::Code,
            vec![entry("a", vec![1.0, 0.5]), entry("b", vec![2.0, -0.5])],
        )
        .unwrap();
        index.save(&path).unwrap();
        let loaded: Index<ProgramPair> = Index::load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.dim(), 2);
        assert_eq!(loaded.mode(), RetrievalMode::Code);
        assert_eq!(loaded.entries()[0].key, "a");
        assert_eq!(sniff_payload_kind(&path).unwrap(), "pair");
    }

    #[test]
    fn disk_cache_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path());
        assert!(cache.get("abcdef").is_none());
        cache.put("abcdef", "value").unwrap();
        assert_eq!(cache.get("abcdef").unwrap(), "value");
    }

    #[test]
    fn embed_cached_skips_backend_on_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path());
        let counting = CountingEmbedder::new(HashEmbedder::new(8));
        let a = embed_cached(&counting, Some(&cache), "some text").unwrap();
        let b = embed_cached(&counting, Some(&cache), "some text").unwrap();
        assert_eq!(a, b);
        assert_eq!(counting.calls(), 1);
    }
}
