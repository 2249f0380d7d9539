//! Run manifests: every artifact a run produces is reachable from its
//! manifest, together with the resolved config, input digests, and backend
//! identity.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Resolved configuration after flag/file/default precedence.
    pub config: serde_json::Value,
    /// SHA-256 of each input file (corpus, cassettes, indexes).
    pub input_digests: BTreeMap<String, String>,
    /// Backend identity: `replay:<digest>`, `mock:<rules>`, or `http:<model>`.
    pub backend: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Paths of every artifact the run wrote.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, backend: String) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            input_digests: BTreeMap::new(),
            backend,
            started_unix: now_unix(),
            finished_unix: 0,
            outputs: Vec::new(),
        }
    }

    pub fn record_input(&mut self, label: &str, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        self.input_digests
            .insert(label.to_string(), crate::content_hash(&bytes));
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn finish(&mut self) {
        self.finished_unix = now_unix();
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, format!("{body}\n"))
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let body = std::fs::read_to_string(path)?;
        serde_json::from_str(&body)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Declarative config file (TOML). Flags take precedence over these values,
/// which take precedence over built-in defaults. API keys never appear here;
/// they are read from the environment.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct FileConfig {
    pub backend: Option<String>,
    pub cassette: Option<PathBuf>,
    pub mock_script: Option<PathBuf>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub embed_backend: Option<String>,
    pub embed_dim: Option<usize>,
    pub embed_cassette: Option<PathBuf>,
    pub embed_model: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub h: Option<usize>,
    pub samples_per_example: Option<usize>,
    pub subset_size: Option<usize>,
    pub subset_seed: Option<u64>,
    pub timeout_secs: Option<f64>,
    pub warmup: Option<u32>,
    pub runs: Option<u32>,
    pub jobs: Option<usize>,
    pub compiler: Option<PathBuf>,
    pub compile_flags: Option<Vec<String>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&body).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }
}
