//! The RAS beam-search loop and its baselines, with per-step trace capture.
//!
//! Each step retrieves eligible training entries (the "new pair" rule: a pair
//! stops being eligible once it produced a step winner), prompts the model
//! once per retrieved entry, evaluates every candidate, and advances to the
//! argmax. A step where every candidate scores negative infinity falls back
//! to the incumbent and contributes nothing to the exclusion set.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::aegis::AtomicEdit;
use crate::corpus::{Origin, Program, ProgramPair};
use crate::harness::{Evaluate, FailReason, HarnessError, Score};
use crate::llm::{self, Gateway, LlmError, PromptRole, Slots};
use crate::metrics::edit_distance;
use crate::retrieval::{describe, DiskCache, EmbedText, Index, RetrievalError, RetrievalMode};

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("evaluator environment error: {source}")]
    Environment {
        #[source]
        source: HarnessError,
        /// Steps completed before the abort, for persistence.
        partial: Option<Box<SearchTrace>>,
    },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// The search method being run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ras,
    Aegis,
    DynamicRetrieval,
    NoContextual,
    InstructOnly,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ras => "ras",
            Method::Aegis => "aegis",
            Method::DynamicRetrieval => "dynamic_retrieval",
            Method::NoContextual => "no_contextual",
            Method::InstructOnly => "instruct_only",
        }
    }
}

/// Instruct-only prompt flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructVariant {
    Epsr,
    Ip,
}

/// Search hyperparameters. `for_method` applies each method's defaults:
/// RAS/AEGIS use k=8, m=4 with one sample per retrieved entry; dynamic
/// retrieval uses k=4, h=32, m=1; no-contextual uses k=4, h=8, m=4;
/// instruct-only draws h=32 samples in a single iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub method: Method,
    pub k: usize,
    pub m: usize,
    pub samples_per_example: usize,
    pub h: usize,
    pub variant: InstructVariant,
    pub mode: RetrievalMode,
    pub subset_size: usize,
    pub subset_seed: u64,
}

impl SearchConfig {
    pub fn for_method(method: Method) -> Self {
        let base = SearchConfig {
            method,
            k: 8,
            m: 4,
            samples_per_example: 1,
            h: 1,
            variant: InstructVariant::Epsr,
            mode: RetrievalMode::Contextual,
            subset_size: crate::corpus::DEFAULT_SUBSET_SIZE,
            subset_seed: crate::corpus::DEFAULT_SUBSET_SEED,
        };
        match method {
            Method::Ras | Method::Aegis => base,
            Method::DynamicRetrieval => SearchConfig {
                k: 4,
                m: 1,
                h: 32,
                mode: RetrievalMode::Code,
                ..base
            },
            Method::NoContextual => SearchConfig {
                k: 4,
                m: 4,
                h: 8,
                mode: RetrievalMode::Code,
                ..base
            },
            Method::InstructOnly => SearchConfig {
                k: 0,
                m: 1,
                h: 32,
                mode: RetrievalMode::Code,
                ..base
            },
        }
    }
}

/// One generated candidate: absent program means generation itself failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_index: usize,
    pub source_entry_keys: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub program: Option<Program>,
    pub score: Score,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Full record of one beam step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamStep {
    pub step_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_description: Option<String>,
    pub retrieved: Vec<String>,
    pub candidates: Vec<Candidate>,
    pub chosen: Program,
    pub chosen_score: Score,
    pub advanced: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Full record of one search run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchTrace {
    pub config: SearchConfig,
    pub p0: Program,
    pub p0_score: Score,
    pub steps: Vec<BeamStep>,
    #[serde(rename = "final")]
    pub final_program: Program,
    pub final_score: Score,
    pub used_pair_keys: BTreeSet<String>,
    /// Request digests of every optimization call, in order. Description
    /// calls are excluded so the trace does not depend on cache warmth.
    pub gateway_digests: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// Everything a search run needs: completions, evaluation, and embeddings.
pub struct SearchEngine<'a> {
    pub gateway: &'a Gateway,
    pub evaluator: &'a dyn Evaluate,
    pub embedder: &'a dyn EmbedText,
    pub describe_cache: Option<&'a DiskCache>,
}

/// Candidate text produced by a step, before evaluation.
struct GeneratedCandidate {
    source_entry_keys: Vec<String>,
    source: Option<String>,
    note: Option<String>,
}

/// Retrieval + generation output of one step.
struct StepOutput {
    query_description: Option<String>,
    retrieved: Vec<String>,
    generated: Vec<GeneratedCandidate>,
    note: Option<String>,
}

/// Step query result: the description (contextual mode) and the vector, or
/// the downgrade note when the description call failed.
type QueryOutcome = Result<(Option<String>, Vec<f32>), String>;

impl<'a> SearchEngine<'a> {
    pub fn new(
        gateway: &'a Gateway,
        evaluator: &'a dyn Evaluate,
        embedder: &'a dyn EmbedText,
    ) -> Self {
        SearchEngine {
            gateway,
            evaluator,
            embedder,
            describe_cache: None,
        }
    }

    pub fn with_describe_cache(mut self, cache: &'a DiskCache) -> Self {
        self.describe_cache = Some(cache);
        self
    }

    /// RAS: contextual retrieval of k pairs per step, one candidate per pair,
    /// m steps (Algorithm 1 semantics, including both fallbacks).
    pub fn ras_optimize(
        &self,
        p0: &Program,
        index: &Index<ProgramPair>,
        config: &SearchConfig,
    ) -> Result<SearchTrace, SearchError> {
        if index.mode() != config.mode {
            return Err(SearchError::Config(format!(
                "index was built in {} mode but the config asks for {}",
                index.mode().name(),
                config.mode.name()
            )));
        }
        self.beam_loop(p0, config, |engine, _step, current, exclusions, digests| {
            engine.per_entry_step(
                current,
                exclusions,
                digests,
                config,
                |entry: &crate::retrieval::IndexEntry<ProgramPair>, program| {
                    llm::render(
                        PromptRole::OptimizePair,
                        Slots::new()
                            .text("slow_example", entry.payload.slow.source.clone())
                            .text("fast_example", entry.payload.fast.source.clone())
                            .text("program", program.to_string()),
                    )
                },
                index,
            )
        })
    }

    /// AEGIS: identical control flow to RAS over an atomic-edit index; the
    /// prompt carries the edit description plus its exemplar pair.
    pub fn aegis_optimize(
        &self,
        p0: &Program,
        index: &Index<AtomicEdit>,
        config: &SearchConfig,
    ) -> Result<SearchTrace, SearchError> {
        if index.is_empty() {
            return Err(SearchError::Config("atomic index is empty".into()));
        }
        if index.mode() != RetrievalMode::Contextual {
            return Err(SearchError::Config(
                "atomic index must be built in contextual mode".into(),
            ));
        }
        self.beam_loop(p0, config, |engine, _step, current, exclusions, digests| {
            engine.per_entry_step(
                current,
                exclusions,
                digests,
                config,
                |entry: &crate::retrieval::IndexEntry<AtomicEdit>, program| {
                    llm::render(
                        PromptRole::OptimizeAtomic,
                        Slots::new()
                            .text("program", program.to_string())
                            .text("optimization", entry.payload.description.clone())
                            .text("example_source", entry.payload.exemplar.slow.source.clone())
                            .text("example_target", entry.payload.exemplar.fast.source.clone()),
                    )
                },
                index,
            )
        })
    }

    /// Dynamic retrieval baseline: one code-mode retrieval of k pairs, all in
    /// a single prompt, sampled h times; fastest correct sample or p0.
    pub fn dynamic_retrieval(
        &self,
        p0: &Program,
        index: &Index<ProgramPair>,
        config: &SearchConfig,
    ) -> Result<SearchTrace, SearchError> {
        self.multi_pair_search(p0, index, config)
    }

    /// No-contextual ablation: per-iteration code retrieval, one multi-pair
    /// prompt sampled h times per iteration, RAS fallback and exclusions.
    pub fn no_contextual(
        &self,
        p0: &Program,
        index: &Index<ProgramPair>,
        config: &SearchConfig,
    ) -> Result<SearchTrace, SearchError> {
        self.multi_pair_search(p0, index, config)
    }

    fn multi_pair_search(
        &self,
        p0: &Program,
        index: &Index<ProgramPair>,
        config: &SearchConfig,
    ) -> Result<SearchTrace, SearchError> {
        if index.mode() != RetrievalMode::Code {
            return Err(SearchError::Config(
                "multi-pair baselines require a code-mode index".into(),
            ));
        }
        self.beam_loop(p0, config, |engine, _step, current, exclusions, digests| {
            let query = engine.embedder.embed(&current.source)?;
            let hits = index.query_top_k(&query, config.k, exclusions)?;
            let retrieved: Vec<String> = hits.iter().map(|e| e.key.clone()).collect();
            if hits.is_empty() {
                return Ok(StepOutput {
                    query_description: None,
                    retrieved,
                    generated: Vec::new(),
                    note: Some("no eligible pairs remain".into()),
                });
            }
            let examples: Vec<(String, String)> = hits
                .iter()
                .map(|e| (e.payload.slow.source.clone(), e.payload.fast.source.clone()))
                .collect();
            let request = llm::render(
                PromptRole::OptimizeMulti,
                Slots::new()
                    .pairs("examples", examples)
                    .text("program", current.source.clone()),
            )
            .map_err(|e| SearchError::Config(e.to_string()))?;
            let mut generated = Vec::with_capacity(config.h);
            for _ in 0..config.h {
                generated.push(engine.sample_candidate(&request, retrieved.clone(), digests));
            }
            Ok(StepOutput {
                query_description: None,
                retrieved,
                generated,
                note: None,
            })
        })
    }

    /// Instruct-only baseline: h samples of the chosen prompt variant, no
    /// retrieval, single iteration.
    pub fn instruct_only(
        &self,
        p0: &Program,
        config: &SearchConfig,
    ) -> Result<SearchTrace, SearchError> {
        let role = match config.variant {
            InstructVariant::Epsr => PromptRole::InstructOnlyEpsr,
            InstructVariant::Ip => PromptRole::InstructOnlyIp,
        };
        self.beam_loop(
            p0,
            config,
            |engine, _step, current, _exclusions, digests| {
                let request =
                    llm::render(role, Slots::new().text("program", current.source.clone()))
                        .map_err(|e| SearchError::Config(e.to_string()))?;
                let mut generated = Vec::with_capacity(config.h);
                for _ in 0..config.h {
                    generated.push(engine.sample_candidate(&request, Vec::new(), digests));
                }
                Ok(StepOutput {
                    query_description: None,
                    retrieved: Vec::new(),
                    generated,
                    note: None,
                })
            },
        )
    }

    /// Query vector for the current program: the description's embedding in
    /// contextual mode (regenerated each step), the source's otherwise. A
    /// gateway failure here downgrades the step, not the run.
    fn query_for(
        &self,
        mode: RetrievalMode,
        current: &Program,
    ) -> Result<QueryOutcome, RetrievalError> {
        match mode {
            RetrievalMode::Contextual => {
                match describe(current, self.gateway, self.describe_cache) {
                    Ok(described) => {
                        let vector = self.embedder.embed(&described.text)?;
                        Ok(Ok((Some(described.text), vector)))
                    }
                    Err(RetrievalError::Describe(e)) => Ok(Err(format!("description failed: {e}"))),
                    Err(other) => Err(other),
                }
            }
            RetrievalMode::Code => {
                let vector = self.embedder.embed(&current.source)?;
                Ok(Ok((None, vector)))
            }
        }
    }

    /// Shared RAS/AEGIS step: retrieve k entries, sample one candidate per
    /// entry per configured sample count.
    fn per_entry_step<P, F>(
        &self,
        current: &Program,
        exclusions: &BTreeSet<String>,
        digests: &mut Vec<String>,
        config: &SearchConfig,
        render_for: F,
        index: &Index<P>,
    ) -> Result<StepOutput, SearchError>
    where
        P: crate::retrieval::IndexPayload,
        F: Fn(&crate::retrieval::IndexEntry<P>, &str) -> Result<llm::ChatRequest, LlmError>,
    {
        let (query_description, query) = match self.query_for(config.mode, current)? {
            Ok(q) => q,
            Err(note) => {
                return Ok(StepOutput {
                    query_description: None,
                    retrieved: Vec::new(),
                    generated: Vec::new(),
                    note: Some(note),
                })
            }
        };
        let hits = index.query_top_k(&query, config.k, exclusions)?;
        let retrieved: Vec<String> = hits.iter().map(|e| e.key.clone()).collect();
        let mut generated = Vec::new();
        for entry in hits {
            for _ in 0..config.samples_per_example.max(1) {
                match render_for(entry, &current.source) {
                    Ok(request) => {
                        generated.push(self.sample_candidate(
                            &request,
                            vec![entry.key.clone()],
                            digests,
                        ));
                    }
                    Err(e) => generated.push(GeneratedCandidate {
                        source_entry_keys: vec![entry.key.clone()],
                        source: None,
                        note: Some(format!("render failed: {e}")),
                    }),
                }
            }
        }
        Ok(StepOutput {
            query_description,
            retrieved,
            generated,
            note: None,
        })
    }

    /// One gateway sample. Gateway or parse failures degrade the candidate
    /// rather than aborting the step.
    fn sample_candidate(
        &self,
        request: &llm::ChatRequest,
        source_entry_keys: Vec<String>,
        digests: &mut Vec<String>,
    ) -> GeneratedCandidate {
        digests.push(request.digest());
        match self.gateway.complete(request) {
            Ok(response) => {
                let extracted = match request.role.response_key() {
                    Some(key) => llm::parse_field(&response, key),
                    None => Ok(llm::extract_code(&response.raw)),
                };
                match extracted {
                    Ok(source) if !source.trim().is_empty() => GeneratedCandidate {
                        source_entry_keys,
                        source: Some(source),
                        note: None,
                    },
                    Ok(_) => GeneratedCandidate {
                        source_entry_keys,
                        source: None,
                        note: Some("candidate source is empty".into()),
                    },
                    Err(e) => GeneratedCandidate {
                        source_entry_keys,
                        source: None,
                        note: Some(format!("parse failed: {e}")),
                    },
                }
            }
            Err(e) => GeneratedCandidate {
                source_entry_keys,
                source: None,
                note: Some(format!("gateway failed: {e}")),
            },
        }
    }

    /// The shared beam loop: evaluate p0, run m steps, apply the per-step and
    /// final fallback rules, and thread the exclusion set.
    fn beam_loop<F>(
        &self,
        p0: &Program,
        config: &SearchConfig,
        mut step_fn: F,
    ) -> Result<SearchTrace, SearchError>
    where
        F: FnMut(
            &Self,
            usize,
            &Program,
            &BTreeSet<String>,
            &mut Vec<String>,
        ) -> Result<StepOutput, SearchError>,
    {
        let mut digests = Vec::new();
        let p0_report = self
            .evaluator
            .evaluate(p0)
            .map_err(|source| SearchError::Environment {
                source,
                partial: None,
            })?;
        let p0_score = p0_report.score.clone();
        if !p0_score.is_finite() {
            return Ok(SearchTrace {
                config: config.clone(),
                p0: p0.clone(),
                p0_score: p0_score.clone(),
                steps: Vec::new(),
                final_program: p0.clone(),
                final_score: p0_score,
                used_pair_keys: BTreeSet::new(),
                gateway_digests: digests,
                diagnostic: Some("source program does not pass the test subset".into()),
            });
        }

        let mut exclusions: BTreeSet<String> = BTreeSet::new();
        let mut used_pair_keys: BTreeSet<String> = BTreeSet::new();
        let mut steps: Vec<BeamStep> = Vec::with_capacity(config.m);
        let mut current = p0.clone();
        let mut current_score = p0_score.clone();

        for step_index in 1..=config.m {
            let output = step_fn(self, step_index, &current, &exclusions, &mut digests)?;

            let mut candidates = Vec::with_capacity(output.generated.len());
            for (i, gen) in output.generated.into_iter().enumerate() {
                let candidate_index = i + 1;
                let (program, score, note) = match gen.source {
                    Some(source) => {
                        let program = Program {
                            source,
                            problem_id: current.problem_id.clone(),
                            program_id: format!(
                                "{}::s{step_index}c{candidate_index}",
                                p0.program_id
                            ),
                            origin: Origin::Generated,
                        };
                        let report = self.evaluator.evaluate(&program).map_err(|source| {
                            SearchError::Environment {
                                source,
                                partial: Some(Box::new(SearchTrace {
                                    config: config.clone(),
                                    p0: p0.clone(),
                                    p0_score: p0_score.clone(),
                                    steps: steps.clone(),
                                    final_program: current.clone(),
                                    final_score: current_score.clone(),
                                    used_pair_keys: used_pair_keys.clone(),
                                    gateway_digests: digests.clone(),
                                    diagnostic: Some("aborted by evaluator error".into()),
                                })),
                            }
                        })?;
                        (Some(program), report.score, gen.note)
                    }
                    None => (
                        None,
                        Score::neg_infinity(FailReason::GenerationFailed),
                        gen.note,
                    ),
                };
                candidates.push(Candidate {
                    candidate_index,
                    source_entry_keys: gen.source_entry_keys,
                    program,
                    score,
                    note,
                });
            }

            let winner = pick_winner(&candidates, &current.source);
            let (chosen, chosen_score, advanced, winner_keys) = match winner {
                Some(idx) => {
                    let cand = &candidates[idx];
                    (
                        cand.program.clone().expect("winner has a program"),
                        cand.score.clone(),
                        true,
                        cand.source_entry_keys.clone(),
                    )
                }
                None => (current.clone(), current_score.clone(), false, Vec::new()),
            };

            if advanced {
                for key in &winner_keys {
                    exclusions.insert(key.clone());
                    used_pair_keys.insert(key.clone());
                }
            }

            steps.push(BeamStep {
                step_index,
                query_description: output.query_description,
                retrieved: output.retrieved,
                candidates,
                chosen: chosen.clone(),
                chosen_score: chosen_score.clone(),
                advanced,
                note: output.note,
            });
            current = chosen;
            current_score = chosen_score;
        }

        let (final_program, final_score) = match steps.last() {
            Some(last) if last.chosen_score.is_finite() => {
                (last.chosen.clone(), last.chosen_score.clone())
            }
            _ => (p0.clone(), p0_score.clone()),
        };

        Ok(SearchTrace {
            config: config.clone(),
            p0: p0.clone(),
            p0_score,
            steps,
            final_program,
            final_score,
            used_pair_keys,
            gateway_digests: digests,
            diagnostic: None,
        })
    }
}

/// Argmax over candidates by score quality; equal finite scores prefer the
/// smaller edit distance to the parent, then the lower candidate index.
/// `None` when no candidate is finite.
fn pick_winner(candidates: &[Candidate], parent_source: &str) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None; // (index, cached edit distance)
    for (idx, candidate) in candidates.iter().enumerate() {
        if !candidate.score.is_finite() {
            continue;
        }
        match best {
            None => best = Some((idx, usize::MAX)),
            Some((best_idx, cached)) => {
                let ordering = candidate.score.quality_cmp(&candidates[best_idx].score);
                match ordering {
                    std::cmp::Ordering::Greater => best = Some((idx, usize::MAX)),
                    std::cmp::Ordering::Equal => {
                        let best_distance = if cached == usize::MAX {
                            distance_to_parent(&candidates[best_idx], parent_source)
                        } else {
                            cached
                        };
                        let this_distance = distance_to_parent(candidate, parent_source);
                        if this_distance < best_distance {
                            best = Some((idx, this_distance));
                        } else {
                            best = Some((best_idx, best_distance));
                        }
                    }
                    std::cmp::Ordering::Less => {}
                }
            }
        }
    }
    best.map(|(idx, _)| idx)
}

fn distance_to_parent(candidate: &Candidate, parent_source: &str) -> usize {
    candidate
        .program
        .as_ref()
        .map(|p| edit_distance(&p.source, parent_source))
        .unwrap_or(usize::MAX)
}

/// Persists a trace as a deterministic single-line JSON document.
pub fn write_trace(path: &std::path::Path, trace: &SearchTrace) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let body = serde_json::to_string(trace).expect("trace serializes");
    std::fs::write(path, format!("{body}\n"))
}

pub fn read_trace(path: &std::path::Path) -> std::io::Result<SearchTrace> {
    let body = std::fs::read_to_string(path)?;
    serde_json::from_str(&body).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn candidate(idx: usize, score: Score, source: Option<&str>) -> Candidate {
        Candidate {
            candidate_index: idx,
            source_entry_keys: vec![format!("k{idx}")],
            program: source.map(|s| Program {
                source: s.to_string(),
                problem_id: "p".into(),
                program_id: format!("c{idx}"),
                origin: Origin::Generated,
            }),
            score,
            note: None,
        }
    }

    #[test]
    fn winner_is_fastest_finite() {
        let cands = vec![
            candidate(1, Score::neg_infinity(FailReason::Timeout), None),
            candidate(2, Score::finite(2.0), Some("bb")),
            candidate(3, Score::finite(1.0), Some("cc")),
        ];
        assert_eq!(pick_winner(&cands, "aa"), Some(2));
    }

    #[test]
    fn no_finite_candidate_means_no_winner() {
        let cands = vec![
            candidate(1, Score::neg_infinity(FailReason::Timeout), None),
            candidate(2, Score::neg_infinity(FailReason::GenerationFailed), None),
        ];
        assert_eq!(pick_winner(&cands, "aa"), None);
    }

    #[test]
    fn equal_scores_prefer_smaller_edit_distance_then_index() {
        let cands = vec![
            candidate(1, Score::finite(1.0), Some("aaxx")),
            candidate(2, Score::finite(1.0), Some("aax")),
            candidate(3, Score::finite(1.0), Some("aax")),
        ];
        // "aax" is closer to parent "aaa" than "aaxx"; index 2 beats index 3.
        assert_eq!(pick_winner(&cands, "aaa"), Some(1));
    }

    #[test]
    fn config_defaults_match_method() {
        let ras = SearchConfig::for_method(Method::Ras);
        assert_eq!((ras.k, ras.m), (8, 4));
        assert_eq!(ras.mode, RetrievalMode::Contextual);
        let dynamic = SearchConfig::for_method(Method::DynamicRetrieval);
        assert_eq!((dynamic.k, dynamic.h, dynamic.m), (4, 32, 1));
        assert_eq!(dynamic.mode, RetrievalMode::Code);
        let nc = SearchConfig::for_method(Method::NoContextual);
        assert_eq!((nc.k, nc.h, nc.m), (4, 8, 4));
        let instruct = SearchConfig::for_method(Method::InstructOnly);
        assert_eq!((instruct.h, instruct.m), (32, 1));
    }
}
