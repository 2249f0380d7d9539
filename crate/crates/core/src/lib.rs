//! Retrieval-guided beam search for LLM-driven program optimization.
//!
//! The crate is organized around the search pipeline:
//!
//! - [`corpus`] loads and selects slow-fast program pair corpora and test suites.
//! - [`harness`] compiles candidates, runs them against test cases under a
//!   timeout, and produces the extended-real score used for selection.
//! - [`llm`] renders prompt templates and talks to a completion backend
//!   (live HTTP, record/replay cassette, or scripted mock).
//! - [`retrieval`] embeds programs or their generated descriptions and answers
//!   exact top-k nearest-neighbor queries with exclusion filtering.
//! - [`search`] is the RAS beam-search loop plus the dynamic-retrieval,
//!   no-contextual, and instruct-only baselines, all with per-step tracing.
//! - [`aegis`] builds the atomic-edit dataset and drives the AEGIS variant of
//!   the search.
//! - [`metrics`] computes speedups, % optimized, character edit distances, and
//!   timing correlations, and renders report documents.
//!
//! Everything is deterministic under the replay/mock backends; no test or
//! replay path touches the network.

pub mod aegis;
pub mod corpus;
pub mod harness;
pub mod llm;
pub mod manifest;
pub mod metrics;
pub mod retrieval;
pub mod search;

pub use corpus::{Program, ProgramPair, TestCase, TestSuite};
pub use harness::{EvaluationReport, FailReason, Harness, Score};
pub use llm::{ChatRequest, Gateway, LlmResponse, PromptRole};
pub use retrieval::{Index, RetrievalMode};
pub use search::{SearchConfig, SearchEngine, SearchTrace};

/// Hex-encoded SHA-256 of a byte string; the content-address used for compile
/// caches, description caches, cassette digests, and scripted timing keys.
pub fn content_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
