//! Shared test support: scripted evaluators/embedders and fixture builders.

#![allow(dead_code)]

pub mod scenarios;

use std::collections::HashMap;
use std::sync::Mutex;

use rasopt::corpus::{Origin, Program, ProgramPair};
use rasopt::harness::{
    CaseResult, CaseStatus, Evaluate, EvaluationReport, FailReason, HarnessError, Score,
};
use rasopt::retrieval::{EmbedText, Index, IndexEntry, RetrievalError, RetrievalMode};

/// Evaluator driven by an exact source -> score table. Unknown sources are
/// environment errors so scenario mistakes surface instead of hiding.
pub struct ScriptedEvaluator {
    scores: Mutex<HashMap<String, Score>>,
}

impl ScriptedEvaluator {
    pub fn new(entries: Vec<(&str, Score)>) -> Self {
        ScriptedEvaluator {
            scores: Mutex::new(
                entries
                    .into_iter()
                    .map(|(source, score)| (source.to_string(), score))
                    .collect(),
            ),
        }
    }

    pub fn insert(&self, source: &str, score: Score) {
        self.scores
            .lock()
            .unwrap()
            .insert(source.to_string(), score);
    }
}

impl Evaluate for ScriptedEvaluator {
    fn evaluate(&self, program: &Program) -> Result<EvaluationReport, HarnessError> {
        let score = self
            .scores
            .lock()
            .unwrap()
            .get(&program.source)
            .cloned()
            .ok_or_else(|| {
                HarnessError::Environment(format!(
                    "scripted evaluator has no entry for source {:?}",
                    program.source
                ))
            })?;
        let per_case = match &score {
            Score::Finite { seconds } => vec![CaseResult {
                case_index: 1,
                status: CaseStatus::Pass,
                time: *seconds,
            }],
            Score::NegInfinity { reason } => match reason {
                FailReason::CompileError | FailReason::GenerationFailed => Vec::new(),
                FailReason::Timeout => vec![CaseResult {
                    case_index: 1,
                    status: CaseStatus::Timeout,
                    time: 0.0,
                }],
                FailReason::WrongAnswer { case_index } => vec![CaseResult {
                    case_index: *case_index,
                    status: CaseStatus::Fail,
                    time: 0.0,
                }],
                FailReason::RuntimeError { case_index } => vec![CaseResult {
                    case_index: *case_index,
                    status: CaseStatus::RuntimeError,
                    time: 0.0,
                }],
            },
        };
        Ok(EvaluationReport {
            program_id: program.program_id.clone(),
            score,
            per_case,
            compile_log: String::new(),
        })
    }
}

/// Embedder driven by an exact text -> vector table, for pinning retrieval
/// geometry in scenarios.
pub struct ScriptedEmbedder {
    map: HashMap<String, Vec<f32>>,
}

impl ScriptedEmbedder {
    pub fn new(entries: Vec<(&str, Vec<f32>)>) -> Self {
        ScriptedEmbedder {
            map: entries
                .into_iter()
                .map(|(text, vector)| (text.to_string(), vector))
                .collect(),
        }
    }
}

impl EmbedText for ScriptedEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>, RetrievalError> {
        self.map
            .get(text)
            .cloned()
            .ok_or_else(|| RetrievalError::Embedding(format!("no scripted vector for {text:?}")))
    }

    fn id(&self) -> String {
        "scripted".into()
    }
}

pub fn program(id: &str, problem: &str, source: &str) -> Program {
    Program {
        source: source.to_string(),
        problem_id: problem.to_string(),
        program_id: id.to_string(),
        origin: Origin::Corpus,
    }
}

pub fn pair(key: &str, problem: &str, slow_source: &str, fast_source: &str) -> ProgramPair {
    ProgramPair {
        slow: program(&format!("{key}-slow"), problem, slow_source),
        fast: program(&format!("{key}-fast"), problem, fast_source),
        recorded_speedup: Some(2.0),
    }
}

/// Pair index with explicit vectors, bypassing the embedding backends.
pub fn pair_index(
    mode: RetrievalMode,
    entries: Vec<(&str, ProgramPair, Vec<f32>)>,
) -> Index<ProgramPair> {
    Index::from_entries(
        mode,
        entries
            .into_iter()
            .map(|(key, payload, vector)| IndexEntry {
                key: key.to_string(),
                payload,
                vector,
                description: None,
            })
            .collect(),
    )
    .expect("index builds")
}

/// Renders a role's template into the exact document layout the golden files
/// pin: metadata header, system text, user text.
pub fn prompt_document(role: rasopt::llm::PromptRole, slots: rasopt::llm::Slots) -> String {
    let request = rasopt::llm::render(role, slots).expect("template renders");
    format!(
        "ROLE: {}\nTEMPERATURE: {}\nMAX_TOKENS: {}\n--- SYSTEM ---\n{}\n--- USER ---\n{}\n--- END ---\n",
        request.role.name(),
        request.sampling.temperature,
        request.sampling.max_tokens,
        request.system,
        request.user,
    )
}

/// Golden slot bindings per role, shared by the golden tests and the
/// acceptance suite.
pub fn golden_slots(role: rasopt::llm::PromptRole) -> rasopt::llm::Slots {
    use rasopt::llm::{PromptRole, Slots};
    match role {
        PromptRole::OptimizePair => Slots::new()
            .text("slow_example", "<<RETRIEVED_SLOW>>")
            .text("fast_example", "<<RETRIEVED_FAST>>")
            .text("program", "<<PROGRAM>>"),
        PromptRole::OptimizeMulti => {
            let examples = (1..=4)
                .map(|i| {
                    (
                        format!("<<RETRIEVED_SLOW_{i}>>"),
                        format!("<<RETRIEVED_FAST_{i}>>"),
                    )
                })
                .collect();
            Slots::new()
                .pairs("examples", examples)
                .text("program", "<<PROGRAM>>")
        }
        PromptRole::Decompose => Slots::new()
            .text("source", "<<SOURCE_PROGRAM>>")
            .text("target", "<<TARGET_PROGRAM>>"),
        PromptRole::ApplyEdit => Slots::new()
            .text("program", "<<PROGRAM>>")
            .text("optimization", "<<OPTIMIZATION>>"),
        PromptRole::GeneralizeEdit => Slots::new()
            .text("edit", "<<EDIT>>")
            .text("program", "<<PROGRAM>>"),
        PromptRole::OptimizeAtomic => Slots::new()
            .text("program", "<<PROGRAM>>")
            .text("optimization", "<<OPTIMIZATION>>")
            .text("example_source", "<<EXAMPLE_SOURCE>>")
            .text("example_target", "<<EXAMPLE_TARGET>>"),
        _ => Slots::new().text("program", "<<PROGRAM>>"),
    }
}

pub const ALL_ROLES: [rasopt::llm::PromptRole; 9] = [
    rasopt::llm::PromptRole::Context,
    rasopt::llm::PromptRole::OptimizePair,
    rasopt::llm::PromptRole::OptimizeMulti,
    rasopt::llm::PromptRole::InstructOnlyEpsr,
    rasopt::llm::PromptRole::InstructOnlyIp,
    rasopt::llm::PromptRole::Decompose,
    rasopt::llm::PromptRole::ApplyEdit,
    rasopt::llm::PromptRole::GeneralizeEdit,
    rasopt::llm::PromptRole::OptimizeAtomic,
];

pub fn finite(seconds: f64) -> Score {
    Score::Finite { seconds }
}

pub fn wrong(case: usize) -> Score {
    Score::NegInfinity {
        reason: FailReason::WrongAnswer { case_index: case },
    }
}
