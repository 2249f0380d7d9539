//! Atomic-edit dataset construction under scripted gateways, plus the AEGIS
//! search loop over a scripted atomic index.

mod common;

use common::{finite, program, wrong, ScriptedEmbedder, ScriptedEvaluator};
use rasopt::aegis::{
    build_atomic_dataset, AtomicBuildConfig, AtomicEdit, EditProvenance, EditValidator,
};
use rasopt::corpus::{Origin, Program, ProgramPair};
use rasopt::harness::HarnessError;
use rasopt::llm::{Gateway, MockBackend, MockRule, PromptRole};
use rasopt::retrieval::{Index, IndexEntry, RetrievalMode};
use rasopt::search::{Method, SearchConfig, SearchEngine};

fn corpus_pair(name: &str) -> ProgramPair {
    ProgramPair {
        slow: program(&format!("{name}-slow"), name, &format!("SLOW_{name}")),
        fast: program(&format!("{name}-fast"), name, &format!("FAST_{name}")),
        recorded_speedup: Some(3.0),
    }
}

fn rule(role: PromptRole, contains: &[&str], response: &str) -> MockRule {
    MockRule {
        role: Some(role),
        user_contains: contains.iter().map(|s| s.to_string()).collect(),
        times: None,
        response: response.to_string(),
    }
}

/// The acceptance scenario: decompositions of sizes {3, 2, parse-failure}.
fn scripted_build() -> (rasopt::aegis::AtomicBuild, Gateway) {
    let pairs = vec![corpus_pair("p1"), corpus_pair("p2"), corpus_pair("p3")];
    let mut rules = vec![
        rule(
            PromptRole::Decompose,
            &["SLOW_p1"],
            r#"{"1": "edit p1 one", "2": "edit p1 two", "3": "edit p1 three"}"#,
        ),
        rule(
            PromptRole::Decompose,
            &["SLOW_p2"],
            r#"{"1": "edit p2 one", "2": "edit p2 two"}"#,
        ),
        rule(PromptRole::Decompose, &["SLOW_p3"], "sorry, no json today"),
    ];
    // Each applied edit produces a distinct program derived from the edit text.
    for (pair, count) in [("p1", 3usize), ("p2", 2)] {
        for i in 1..=count {
            let word = ["one", "two", "three"][i - 1];
            rules.push(rule(
                PromptRole::ApplyEdit,
                &[&format!("edit {pair} {word}")],
                &format!("{{\"optimized_code\": \"PROG_{pair}_{i}\"}}"),
            ));
        }
    }
    rules.push(rule(
        PromptRole::GeneralizeEdit,
        &[],
        r#"{"rewritten_optimization": "generalized description"}"#,
    ));

    let gateway = Gateway::new(Box::new(MockBackend::new(rules)));
    let config = AtomicBuildConfig {
        validate_compile: false,
        validate_tests: false,
    };
    let build = build_atomic_dataset(&pairs, &gateway, None, &config).expect("build runs");
    (build, gateway)
}

#[test]
fn scripted_scenario_emits_exactly_five_edits() {
    let (build, _) = scripted_build();
    assert_eq!(build.edits.len(), 5);
    assert_eq!(build.summary.pairs_in, 3);
    assert_eq!(build.summary.pairs_decomposed, 2);
    assert_eq!(build.summary.edits_emitted, 5);
    assert_eq!(build.summary.rejects.get("decompose_parse_error"), Some(&1));
}

#[test]
fn dataset_cardinality_matches_per_pair_logs() {
    let (build, _) = scripted_build();
    let from_logs: usize = build.summary.pair_outcomes.iter().map(|o| o.emitted).sum();
    assert_eq!(build.edits.len(), from_logs);
    assert_eq!(build.summary.pair_outcomes.len(), build.summary.pairs_in);
}

#[test]
fn chains_are_contiguous_within_each_pair() {
    let (build, _) = scripted_build();
    for origin in ["p1", "p2"] {
        let chain: Vec<&AtomicEdit> = build
            .edits
            .iter()
            .filter(|e| e.exemplar.slow.problem_id == origin)
            .collect();
        assert!(!chain.is_empty());
        assert_eq!(chain[0].exemplar.slow.source, format!("SLOW_{origin}"));
        for window in chain.windows(2) {
            assert_eq!(
                window[1].exemplar.slow.source, window[0].exemplar.fast.source,
                "edit exemplars must chain"
            );
        }
    }
}

#[test]
fn no_edit_has_identical_exemplar_sides() {
    let (build, _) = scripted_build();
    for edit in &build.edits {
        assert_ne!(edit.exemplar.slow.source, edit.exemplar.fast.source);
    }
}

#[test]
fn no_op_edits_are_excluded_and_chain_continues() {
    let pairs = vec![corpus_pair("p1")];
    let rules = vec![
        rule(
            PromptRole::Decompose,
            &["SLOW_p1"],
            r#"{"1": "edit a", "2": "edit b"}"#,
        ),
        // First edit echoes the input program -> no-op, rejected.
        rule(
            PromptRole::ApplyEdit,
            &["edit a"],
            r#"{"optimized_code": "SLOW_p1"}"#,
        ),
        rule(
            PromptRole::ApplyEdit,
            &["edit b"],
            r#"{"optimized_code": "PROG_b"}"#,
        ),
        rule(
            PromptRole::GeneralizeEdit,
            &[],
            r#"{"rewritten_optimization": "general"}"#,
        ),
    ];
    let gateway = Gateway::new(Box::new(MockBackend::new(rules)));
    let config = AtomicBuildConfig {
        validate_compile: false,
        validate_tests: false,
    };
    let build = build_atomic_dataset(&pairs, &gateway, None, &config).unwrap();
    assert_eq!(build.edits.len(), 1);
    assert_eq!(build.summary.rejects.get("no_op"), Some(&1));
    // The surviving edit still chains from the original slow program.
    assert_eq!(build.edits[0].exemplar.slow.source, "SLOW_p1");
    assert_eq!(build.edits[0].exemplar.fast.source, "PROG_b");
}

struct RejectingValidator;

impl EditValidator for RejectingValidator {
    fn compiles(&self, program: &Program) -> Result<bool, HarnessError> {
        Ok(!program.source.contains("BROKEN"))
    }

    fn passes_tests(&self, _program: &Program) -> Result<bool, HarnessError> {
        Ok(true)
    }
}

#[test]
fn compile_validation_drops_the_failing_edit_only() {
    let pairs = vec![corpus_pair("p1")];
    let rules = vec![
        rule(
            PromptRole::Decompose,
            &["SLOW_p1"],
            r#"{"1": "edit a", "2": "edit b"}"#,
        ),
        rule(
            PromptRole::ApplyEdit,
            &["edit a"],
            r#"{"optimized_code": "BROKEN_prog"}"#,
        ),
        rule(
            PromptRole::ApplyEdit,
            &["edit b"],
            r#"{"optimized_code": "PROG_ok"}"#,
        ),
        rule(
            PromptRole::GeneralizeEdit,
            &[],
            r#"{"rewritten_optimization": "general"}"#,
        ),
    ];
    let gateway = Gateway::new(Box::new(MockBackend::new(rules)));
    let config = AtomicBuildConfig {
        validate_compile: true,
        validate_tests: false,
    };
    let validator = RejectingValidator;
    let build = build_atomic_dataset(&pairs, &gateway, Some(&validator), &config).unwrap();
    assert_eq!(build.edits.len(), 1);
    assert_eq!(build.summary.rejects.get("compile_failed"), Some(&1));
    assert_eq!(build.edits[0].exemplar.slow.source, "SLOW_p1");
    assert_eq!(build.edits[0].exemplar.fast.source, "PROG_ok");
}

#[test]
fn generalization_fallback_keeps_raw_text_with_flag() {
    let pairs = vec![corpus_pair("p1")];
    let rules = vec![
        rule(PromptRole::Decompose, &["SLOW_p1"], r#"{"1": "edit a"}"#),
        rule(
            PromptRole::ApplyEdit,
            &["edit a"],
            r#"{"optimized_code": "PROG_a"}"#,
        ),
        rule(PromptRole::GeneralizeEdit, &[], "not json"),
    ];
    let gateway = Gateway::new(Box::new(MockBackend::new(rules)));
    let config = AtomicBuildConfig {
        validate_compile: false,
        validate_tests: false,
    };
    let build = build_atomic_dataset(&pairs, &gateway, None, &config).unwrap();
    assert_eq!(build.edits.len(), 1);
    assert!(build.edits[0].provenance.generalization_failed);
    assert_eq!(build.edits[0].description, "edit a");
    assert_eq!(build.summary.generalization_fallbacks, 1);
}

fn atomic_index(entries: Vec<(&str, &str, &str, &str, Vec<f32>)>) -> Index<AtomicEdit> {
    Index::from_entries(
        RetrievalMode::Contextual,
        entries
            .into_iter()
            .map(|(key, description, slow, fast, vector)| IndexEntry {
                key: key.to_string(),
                payload: AtomicEdit {
                    description: description.to_string(),
                    exemplar: ProgramPair {
                        slow: Program {
                            source: slow.to_string(),
                            problem_id: "train".into(),
                            program_id: format!("{key}-slow"),
                            origin: Origin::Generated,
                        },
                        fast: Program {
                            source: fast.to_string(),
                            problem_id: "train".into(),
                            program_id: format!("{key}-fast"),
                            origin: Origin::Generated,
                        },
                        recorded_speedup: None,
                    },
                    provenance: EditProvenance {
                        origin_pair_id: key.to_string(),
                        ordinal: 1,
                        generalization_failed: false,
                    },
                },
                vector,
                description: Some(description.to_string()),
            })
            .collect(),
    )
    .expect("atomic index builds")
}

#[test]
fn aegis_search_picks_the_applicable_edit() {
    let p0 = program("p0", "prob", "P0");
    let index = atomic_index(vec![
        (
            "unroll#1",
            "unroll the hot loop",
            "EX_SLOW_U",
            "EX_FAST_U",
            vec![1.0, 0.0],
        ),
        (
            "io#1",
            "buffer the output stream",
            "EX_SLOW_IO",
            "EX_FAST_IO",
            vec![2.0, 0.0],
        ),
    ]);
    let gateway = Gateway::new(Box::new(MockBackend::new(vec![
        MockRule {
            role: Some(PromptRole::Context),
            user_contains: vec![],
            times: None,
            response: r#"{"algorithm": "desc"}"#.into(),
        },
        MockRule {
            role: Some(PromptRole::OptimizeAtomic),
            user_contains: vec!["unroll the hot loop".into()],
            times: None,
            response: r#"{"optimized_code": "CAND_UNROLL"}"#.into(),
        },
        MockRule {
            role: Some(PromptRole::OptimizeAtomic),
            user_contains: vec!["buffer the output stream".into()],
            times: None,
            response: r#"{"optimized_code": "CAND_IO"}"#.into(),
        },
    ])));
    let evaluator = ScriptedEvaluator::new(vec![
        ("P0", finite(10.0)),
        ("CAND_UNROLL", finite(2.0)),
        ("CAND_IO", wrong(1)),
    ]);
    let embedder = ScriptedEmbedder::new(vec![("desc", vec![0.0, 0.0])]);
    let engine = SearchEngine::new(&gateway, &evaluator, &embedder);
    let mut config = SearchConfig::for_method(Method::Aegis);
    config.k = 2;
    config.m = 1;
    let trace = engine.aegis_optimize(&p0, &index, &config).unwrap();
    assert_eq!(trace.final_program.source, "CAND_UNROLL");
    assert_eq!(gateway.calls_by_role(PromptRole::OptimizeAtomic), 2);
    // The prompt carried the exemplar pair, not just the description.
    assert!(trace.steps[0].advanced);
    assert_eq!(
        trace.used_pair_keys,
        ["unroll#1".to_string()].into_iter().collect()
    );
}

#[test]
fn aegis_requires_a_contextual_index() {
    let p0 = program("p0", "prob", "P0");
    let gateway = Gateway::new(Box::new(MockBackend::new(vec![])));
    let evaluator = ScriptedEvaluator::new(vec![("P0", finite(10.0))]);
    let embedder = ScriptedEmbedder::new(vec![]);
    let engine = SearchEngine::new(&gateway, &evaluator, &embedder);
    let config = SearchConfig::for_method(Method::Aegis);
    // Build a code-mode atomic index; aegis must refuse it before any call.
    let contextual = atomic_index(vec![("k#1", "desc", "S", "F", vec![1.0])]);
    let index = Index::from_entries(RetrievalMode::Code, contextual.entries().to_vec()).unwrap();
    let err = engine.aegis_optimize(&p0, &index, &config).unwrap_err();
    assert!(err.to_string().contains("contextual"));
    assert_eq!(gateway.transcript().len(), 0);
}

#[test]
fn empty_pair_list_is_a_config_error() {
    let gateway = Gateway::new(Box::new(MockBackend::new(vec![])));
    let config = AtomicBuildConfig {
        validate_compile: false,
        validate_tests: false,
    };
    assert!(build_atomic_dataset(&[], &gateway, None, &config).is_err());
}
