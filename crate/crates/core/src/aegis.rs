//! Atomic-edit dataset construction: decompose each slow-fast pair into a
//! numbered sequence of natural-language edits, apply them one at a time to
//! rebuild the optimization as a chain of programs, and generalize each edit
//! description so it can guide optimization of unrelated programs.
//!
//! Per-pair failures are isolated: a pair whose decomposition does not parse
//! contributes nothing, and an edit that fails to apply (or produces a no-op
//! or a non-compiling program when validation is on) is dropped while the
//! chain continues from the previous program.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Origin, Program, ProgramPair};
use crate::harness::{Compilation, Harness, HarnessError};
use crate::llm::{self, Gateway, LlmError, PromptRole, Slots};

#[derive(Debug, thiserror::Error)]
pub enum AegisError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("I/O error at {path}: {detail}")]
    Io { path: PathBuf, detail: String },
}

/// One step of a decomposition, in sequence order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NaturalLanguageEdit {
    pub text: String,
    /// 1-based position in the decomposition.
    pub ordinal: usize,
}

/// Where an atomic edit came from and whether its generalization fell back
/// to the raw decomposition text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditProvenance {
    pub origin_pair_id: String,
    pub ordinal: usize,
    pub generalization_failed: bool,
}

/// A generalized edit description plus its exemplar before/after pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicEdit {
    pub description: String,
    pub exemplar: ProgramPair,
    pub provenance: EditProvenance,
}

impl AtomicEdit {
    /// Content address within a dataset: origin pair plus ordinal.
    pub fn key(&self) -> String {
        format!(
            "{}#{}",
            self.provenance.origin_pair_id, self.provenance.ordinal
        )
    }
}

/// Decomposes a pair into its ordered natural-language edits.
pub fn decompose(
    pair: &ProgramPair,
    gateway: &Gateway,
) -> Result<Vec<NaturalLanguageEdit>, LlmError> {
    let request = llm::render(
        PromptRole::Decompose,
        Slots::new()
            .text("source", pair.slow.source.clone())
            .text("target", pair.fast.source.clone()),
    )?;
    let response = gateway.complete(&request)?;
    let edits = llm::parse_edit_list(&response)?;
    Ok(edits
        .into_iter()
        .enumerate()
        .map(|(i, text)| NaturalLanguageEdit {
            text,
            ordinal: i + 1,
        })
        .collect())
}

/// Applies one edit to a program, yielding the next program in the sequence.
pub fn apply_edit(
    edit: &NaturalLanguageEdit,
    program: &Program,
    gateway: &Gateway,
) -> Result<Program, LlmError> {
    let request = llm::render(
        PromptRole::ApplyEdit,
        Slots::new()
            .text("program", program.source.clone())
            .text("optimization", edit.text.clone()),
    )?;
    let response = gateway.complete(&request)?;
    let source = llm::parse_field(&response, "optimized_code")?;
    Ok(Program {
        source,
        problem_id: program.problem_id.clone(),
        program_id: format!("{}::e{}", program.program_id, edit.ordinal),
        origin: Origin::Generated,
    })
}

/// Generalization outcome; a parse failure falls back to the raw edit text
/// with the flag set.
#[derive(Debug, Clone)]
pub struct Generalized {
    pub text: String,
    pub failed: bool,
}

/// Rewrites an edit description so it applies beyond its origin program.
pub fn generalize(
    edit: &NaturalLanguageEdit,
    applied_to: &Program,
    gateway: &Gateway,
) -> Generalized {
    let request = match llm::render(
        PromptRole::GeneralizeEdit,
        Slots::new()
            .text("edit", edit.text.clone())
            .text("program", applied_to.source.clone()),
    ) {
        Ok(request) => request,
        Err(_) => {
            return Generalized {
                text: edit.text.clone(),
                failed: true,
            }
        }
    };
    match gateway
        .complete(&request)
        .and_then(|resp| llm::parse_field(&resp, "rewritten_optimization"))
    {
        Ok(text) => Generalized {
            text,
            failed: false,
        },
        Err(_) => Generalized {
            text: edit.text.clone(),
            failed: true,
        },
    }
}

/// Validation hook for intermediate programs in the edit chain.
pub trait EditValidator: Send + Sync {
    fn compiles(&self, program: &Program) -> Result<bool, HarnessError>;
    fn passes_tests(&self, program: &Program) -> Result<bool, HarnessError>;
}

/// Compile-only validator backed by the harness cache.
pub struct CompileValidator<'h> {
    pub harness: &'h Harness,
}

impl EditValidator for CompileValidator<'_> {
    fn compiles(&self, program: &Program) -> Result<bool, HarnessError> {
        Ok(matches!(
            self.harness.compile(program)?,
            Compilation::Success(_)
        ))
    }

    fn passes_tests(&self, _program: &Program) -> Result<bool, HarnessError> {
        Err(HarnessError::Environment(
            "compile-only validator cannot run tests".into(),
        ))
    }
}

/// Full validator: compile check plus test-suite execution against the
/// fixed subset of each problem's suite, loaded lazily from a suites root.
pub struct SuiteValidator<'h> {
    harness: &'h Harness,
    suites_root: PathBuf,
    subset_size: usize,
    subset_seed: u64,
    loaded: std::sync::Mutex<BTreeMap<String, crate::corpus::TestSuite>>,
}

impl<'h> SuiteValidator<'h> {
    pub fn new(
        harness: &'h Harness,
        suites_root: impl Into<PathBuf>,
        subset_size: usize,
        subset_seed: u64,
    ) -> Self {
        SuiteValidator {
            harness,
            suites_root: suites_root.into(),
            subset_size,
            subset_seed,
            loaded: std::sync::Mutex::new(BTreeMap::new()),
        }
    }

    fn suite_for(&self, problem_id: &str) -> Result<crate::corpus::TestSuite, HarnessError> {
        let mut loaded = self.loaded.lock().expect("suite cache lock");
        if let Some(suite) = loaded.get(problem_id) {
            return Ok(suite.clone());
        }
        let suite = crate::corpus::load_test_suite(&self.suites_root, problem_id)
            .map_err(|e| HarnessError::Environment(e.to_string()))?;
        let subset = crate::corpus::fixed_subset(&suite, self.subset_size, self.subset_seed);
        loaded.insert(problem_id.to_string(), subset.clone());
        Ok(subset)
    }
}

impl EditValidator for SuiteValidator<'_> {
    fn compiles(&self, program: &Program) -> Result<bool, HarnessError> {
        Ok(matches!(
            self.harness.compile(program)?,
            Compilation::Success(_)
        ))
    }

    fn passes_tests(&self, program: &Program) -> Result<bool, HarnessError> {
        let suite = self.suite_for(&program.problem_id)?;
        let report = self.harness.evaluate(program, &suite)?;
        Ok(report.score.is_finite())
    }
}

/// Dataset construction settings. Compile validation defaults on; test-suite
/// validation defaults off because it needs suites for every training
/// problem and is expensive at corpus scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtomicBuildConfig {
    pub validate_compile: bool,
    pub validate_tests: bool,
}

impl Default for AtomicBuildConfig {
    fn default() -> Self {
        AtomicBuildConfig {
            validate_compile: true,
            validate_tests: false,
        }
    }
}

/// Per-pair log line in the build summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairOutcome {
    pub pair_key: String,
    pub decomposed_edits: usize,
    pub emitted: usize,
    /// (ordinal, raw decomposition text, outcome tag) per edit.
    pub edits: Vec<(usize, String, String)>,
}

/// Counts by outcome for a dataset build.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BuildSummary {
    pub pairs_in: usize,
    pub pairs_decomposed: usize,
    pub edits_emitted: usize,
    pub rejects: BTreeMap<String, usize>,
    pub generalization_fallbacks: usize,
    pub pair_outcomes: Vec<PairOutcome>,
}

impl BuildSummary {
    fn reject(&mut self, reason: &str) {
        *self.rejects.entry(reason.to_string()).or_insert(0) += 1;
    }
}

/// The dataset plus its build summary.
#[derive(Debug, Clone)]
pub struct AtomicBuild {
    pub edits: Vec<AtomicEdit>,
    pub summary: BuildSummary,
}

/// Builds the atomic-edit dataset over a pair corpus. Requires a validator
/// when either validation flag is set.
pub fn build_atomic_dataset(
    pairs: &[ProgramPair],
    gateway: &Gateway,
    validator: Option<&dyn EditValidator>,
    config: &AtomicBuildConfig,
) -> Result<AtomicBuild, AegisError> {
    if pairs.is_empty() {
        return Err(AegisError::Config("no pairs to decompose".into()));
    }
    if (config.validate_compile || config.validate_tests) && validator.is_none() {
        return Err(AegisError::Config(
            "validation is enabled but no validator was provided".into(),
        ));
    }

    let mut summary = BuildSummary {
        pairs_in: pairs.len(),
        ..BuildSummary::default()
    };
    let mut edits_out: Vec<AtomicEdit> = Vec::new();

    for pair in pairs {
        let pair_key = pair.key();
        let mut outcome = PairOutcome {
            pair_key: pair_key.clone(),
            decomposed_edits: 0,
            emitted: 0,
            edits: Vec::new(),
        };

        let steps = match decompose(pair, gateway) {
            Ok(steps) => steps,
            Err(e) => {
                summary.reject("decompose_parse_error");
                outcome
                    .edits
                    .push((0, String::new(), format!("decompose failed: {e}")));
                summary.pair_outcomes.push(outcome);
                continue;
            }
        };
        summary.pairs_decomposed += 1;
        outcome.decomposed_edits = steps.len();

        let mut previous = pair.slow.clone();
        for step in &steps {
            let next = match apply_edit(step, &previous, gateway) {
                Ok(next) => next,
                Err(e) => {
                    summary.reject("apply_parse_error");
                    outcome.edits.push((
                        step.ordinal,
                        step.text.clone(),
                        format!("apply failed: {e}"),
                    ));
                    continue;
                }
            };
            if next.source == previous.source {
                summary.reject("no_op");
                outcome
                    .edits
                    .push((step.ordinal, step.text.clone(), "no-op".into()));
                continue;
            }
            if config.validate_compile {
                let validator = validator.expect("checked above");
                if !validator.compiles(&next)? {
                    summary.reject("compile_failed");
                    outcome
                        .edits
                        .push((step.ordinal, step.text.clone(), "compile failed".into()));
                    continue;
                }
            }
            if config.validate_tests {
                let validator = validator.expect("checked above");
                if !validator.passes_tests(&next)? {
                    summary.reject("tests_failed");
                    outcome
                        .edits
                        .push((step.ordinal, step.text.clone(), "tests failed".into()));
                    continue;
                }
            }
            let generalized = generalize(step, &next, gateway);
            if generalized.failed {
                summary.generalization_fallbacks += 1;
            }
            edits_out.push(AtomicEdit {
                description: generalized.text,
                exemplar: ProgramPair {
                    slow: previous.clone(),
                    fast: next.clone(),
                    recorded_speedup: None,
                },
                provenance: EditProvenance {
                    origin_pair_id: pair_key.clone(),
                    ordinal: step.ordinal,
                    generalization_failed: generalized.failed,
                },
            });
            summary.edits_emitted += 1;
            outcome.emitted += 1;
            outcome
                .edits
                .push((step.ordinal, step.text.clone(), "emitted".into()));
            previous = next;
        }
        summary.pair_outcomes.push(outcome);
    }

    Ok(AtomicBuild {
        edits: edits_out,
        summary,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct AtomicRecord {
    description: String,
    slow_code: String,
    fast_code: String,
    origin_pair_id: String,
    ordinal: usize,
    generalization_failed: bool,
    problem_id: String,
}

/// Appends new edits to a dataset file, skipping records whose
/// (origin pair, ordinal) address is already present — rebuilds are
/// incremental.
pub fn write_atomic_dataset(path: &Path, edits: &[AtomicEdit]) -> Result<usize, AegisError> {
    let mut existing = std::collections::HashSet::new();
    if path.is_file() {
        for edit in load_atomic_dataset(path)? {
            existing.insert(edit.key());
        }
    }
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| AegisError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let mut written = 0usize;
    for edit in edits {
        if !existing.insert(edit.key()) {
            continue;
        }
        let record = AtomicRecord {
            description: edit.description.clone(),
            slow_code: edit.exemplar.slow.source.clone(),
            fast_code: edit.exemplar.fast.source.clone(),
            origin_pair_id: edit.provenance.origin_pair_id.clone(),
            ordinal: edit.provenance.ordinal,
            generalization_failed: edit.provenance.generalization_failed,
            problem_id: edit.exemplar.slow.problem_id.clone(),
        };
        let line = serde_json::to_string(&record).expect("atomic record serializes");
        writeln!(file, "{line}").map_err(|e| AegisError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        written += 1;
    }
    Ok(written)
}

pub fn load_atomic_dataset(path: &Path) -> Result<Vec<AtomicEdit>, AegisError> {
    let file = fs::File::open(path).map_err(|e| AegisError::Io {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let mut edits = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| AegisError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AtomicRecord = serde_json::from_str(&line).map_err(|e| {
            AegisError::Config(format!(
                "invalid atomic record at {}:{}: {e}",
                path.display(),
                idx + 1
            ))
        })?;
        let mk = |source: String, suffix: &str| Program {
            source,
            problem_id: record.problem_id.clone(),
            program_id: format!("{}#{}/{suffix}", record.origin_pair_id, record.ordinal),
            origin: Origin::Generated,
        };
        edits.push(AtomicEdit {
            description: record.description.clone(),
            exemplar: ProgramPair {
                slow: mk(record.slow_code.clone(), "slow"),
                fast: mk(record.fast_code.clone(), "fast"),
                recorded_speedup: None,
            },
            provenance: EditProvenance {
                origin_pair_id: record.origin_pair_id,
                ordinal: record.ordinal,
                generalization_failed: record.generalization_failed,
            },
        });
    }
    Ok(edits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Gateway, MockBackend, MockRule};

    fn pair(problem: &str) -> ProgramPair {
        let mk = |suffix: &str| Program {
            source: format!("int main() {{ /* {problem} {suffix} */ }}"),
            problem_id: problem.to_string(),
            program_id: format!("{problem}-{suffix}"),
            origin: Origin::Corpus,
        };
        ProgramPair {
            slow: mk("slow"),
            fast: mk("fast"),
            recorded_speedup: Some(2.0),
        }
    }

    fn gateway(rules: Vec<MockRule>) -> Gateway {
        Gateway::new(Box::new(MockBackend::new(rules)))
    }

    #[test]
    fn decompose_parses_numbered_edits() {
        let gw = gateway(vec![MockBackend::rule(
            PromptRole::Decompose,
            r#"{"1": "hoist loop bound", "2": "use faster I/O", "3": "reserve vector"}"#,
        )]);
        let edits = decompose(&pair("p"), &gw).unwrap();
        assert_eq!(edits.len(), 3);
        assert_eq!(edits[0].ordinal, 1);
        assert_eq!(edits[2].text, "reserve vector");
    }

    #[test]
    fn decompose_propagates_parse_failure() {
        let gw = gateway(vec![MockBackend::rule(
            PromptRole::Decompose,
            "not json at all",
        )]);
        assert!(decompose(&pair("p"), &gw).is_err());
    }

    #[test]
    fn apply_edit_builds_generated_program() {
        let gw = gateway(vec![MockBackend::rule(
            PromptRole::ApplyEdit,
            r#"{"optimized_code": "int main() { return 1; }"}"#,
        )]);
        let edit = NaturalLanguageEdit {
            text: "return 1".into(),
            ordinal: 1,
        };
        let next = apply_edit(&edit, &pair("p").slow, &gw).unwrap();
        assert_eq!(next.source, "int main() { return 1; }");
        assert_eq!(next.origin, Origin::Generated);
    }

    #[test]
    fn generalize_falls_back_on_junk() {
        let gw = gateway(vec![MockBackend::rule(PromptRole::GeneralizeEdit, "junk")]);
        let edit = NaturalLanguageEdit {
            text: "replace recursion with iteration".into(),
            ordinal: 1,
        };
        let got = generalize(&edit, &pair("p").slow, &gw);
        assert!(got.failed);
        assert_eq!(got.text, edit.text);
    }

    #[test]
    fn generalize_uses_rewritten_text() {
        let gw = gateway(vec![MockBackend::rule(
            PromptRole::GeneralizeEdit,
            r#"{"rewritten_optimization": "replace recursion with iteration"}"#,
        )]);
        let edit = NaturalLanguageEdit {
            text: "swap the fib recursion for a loop".into(),
            ordinal: 1,
        };
        let got = generalize(&edit, &pair("p").slow, &gw);
        assert!(!got.failed);
        assert_eq!(got.text, "replace recursion with iteration");
    }

    #[test]
    fn dataset_round_trips_and_appends_incrementally() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("atomic.jsonl");
        let exemplar = pair("p");
        let edit = AtomicEdit {
            description: "unroll the inner loop".into(),
            exemplar,
            provenance: EditProvenance {
                origin_pair_id: "p-slow::p-fast".into(),
                ordinal: 1,
                generalization_failed: false,
            },
        };
        assert_eq!(
            write_atomic_dataset(&path, std::slice::from_ref(&edit)).unwrap(),
            1
        );
        assert_eq!(
            write_atomic_dataset(&path, std::slice::from_ref(&edit)).unwrap(),
            0
        );
        let loaded = load_atomic_dataset(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].description, edit.description);
        assert_eq!(loaded[0].key(), edit.key());
    }
}
