//! Scripted beam-search scenarios shared by the scenario tests and the
//! acceptance suite. Each script pins one piece of the loop's semantics:
//! argmax selection, the two fallbacks, exclusion-set behavior, and the
//! gateway-call budget.

use rasopt::corpus::Program;
use rasopt::harness::Score;
use rasopt::llm::{Gateway, MockBackend, MockRule, PromptRole};
use rasopt::retrieval::RetrievalMode;
use rasopt::search::{Method, SearchConfig, SearchEngine, SearchTrace};

use super::{finite, pair, pair_index, program, wrong, ScriptedEmbedder, ScriptedEvaluator};

pub struct ScenarioOutcome {
    pub trace: SearchTrace,
    pub optimize_calls: usize,
    pub context_calls: usize,
}

fn opt_rule(marker: &str, candidate: &str, times: Option<u64>) -> MockRule {
    MockRule {
        role: Some(PromptRole::OptimizePair),
        user_contains: vec![marker.to_string()],
        times,
        response: format!("{{\"optimized_code\": \"{candidate}\"}}"),
    }
}

fn p0() -> Program {
    program("p0", "prob", "P0")
}

fn ras_config(k: usize, m: usize) -> SearchConfig {
    let mut config = SearchConfig::for_method(Method::Ras);
    config.k = k;
    config.m = m;
    config.mode = RetrievalMode::Code;
    config
}

fn run(
    rules: Vec<MockRule>,
    evaluator: ScriptedEvaluator,
    embedder: ScriptedEmbedder,
    entries: Vec<(&str, Vec<f32>)>,
    config: SearchConfig,
) -> ScenarioOutcome {
    let index = pair_index(
        RetrievalMode::Code,
        entries
            .into_iter()
            .map(|(key, vector)| {
                let slow = format!("S{key}");
                let fast = format!("F{key}");
                (key, pair(key, "prob", &slow, &fast), vector)
            })
            .collect(),
    );
    let gateway = Gateway::new(Box::new(MockBackend::new(rules)));
    let engine = SearchEngine::new(&gateway, &evaluator, &embedder);
    let trace = engine
        .ras_optimize(&p0(), &index, &config)
        .expect("search runs");
    ScenarioOutcome {
        optimize_calls: gateway.calls_by_role(PromptRole::OptimizePair),
        context_calls: gateway.calls_by_role(PromptRole::Context),
        trace,
    }
}

/// (a) The fastest correct candidate wins the step.
pub fn argmax_selects_fastest_correct() -> ScenarioOutcome {
    let outcome = run(
        vec![
            opt_rule("SA", "CAND_A", None),
            opt_rule("SB", "CAND_B", None),
            opt_rule("SC", "CAND_C", None),
        ],
        ScriptedEvaluator::new(vec![
            ("P0", finite(10.0)),
            ("CAND_A", wrong(1)),
            ("CAND_B", finite(2.0)),
            ("CAND_C", finite(1.0)),
        ]),
        ScriptedEmbedder::new(vec![("P0", vec![0.0, 0.0])]),
        vec![
            ("A", vec![1.0, 0.0]),
            ("B", vec![2.0, 0.0]),
            ("C", vec![3.0, 0.0]),
        ],
        ras_config(3, 1),
    );
    let step = &outcome.trace.steps[0];
    assert_eq!(step.retrieved, vec!["A", "B", "C"]);
    assert_eq!(step.candidates.len(), 3);
    assert_eq!(step.chosen.source, "CAND_C");
    assert_eq!(step.chosen_score, finite(1.0));
    assert!(step.advanced);
    assert_eq!(outcome.trace.final_program.source, "CAND_C");
    outcome
}

/// (b) A step where every candidate fails keeps the incumbent.
pub fn all_failed_candidates_fall_back() -> ScenarioOutcome {
    let outcome = run(
        vec![
            opt_rule("SA", "CAND_A", None),
            opt_rule("SB", "CAND_B", None),
            opt_rule("SC", "CAND_C", None),
        ],
        ScriptedEvaluator::new(vec![
            ("P0", finite(10.0)),
            ("CAND_A", wrong(1)),
            ("CAND_B", wrong(2)),
            ("CAND_C", wrong(3)),
        ]),
        ScriptedEmbedder::new(vec![("P0", vec![0.0, 0.0])]),
        vec![
            ("A", vec![1.0, 0.0]),
            ("B", vec![2.0, 0.0]),
            ("C", vec![3.0, 0.0]),
        ],
        ras_config(3, 1),
    );
    let step = &outcome.trace.steps[0];
    assert!(!step.advanced);
    assert_eq!(step.chosen.source, "P0");
    assert_eq!(step.chosen_score, finite(10.0));
    outcome
}

/// (c) A run where every step fails returns the source program.
pub fn final_fallback_returns_p0() -> ScenarioOutcome {
    let outcome = run(
        vec![
            opt_rule("SA", "CAND_A", None),
            opt_rule("SB", "CAND_B", None),
        ],
        ScriptedEvaluator::new(vec![
            ("P0", finite(10.0)),
            ("CAND_A", wrong(1)),
            ("CAND_B", wrong(1)),
        ]),
        ScriptedEmbedder::new(vec![("P0", vec![0.0, 0.0])]),
        vec![("A", vec![1.0, 0.0]), ("B", vec![2.0, 0.0])],
        ras_config(2, 2),
    );
    assert_eq!(outcome.trace.steps.len(), 2);
    assert!(outcome.trace.steps.iter().all(|s| !s.advanced));
    assert_eq!(outcome.trace.final_program.source, "P0");
    assert_eq!(outcome.trace.final_score, finite(10.0));
    assert!(outcome.trace.used_pair_keys.is_empty());
    outcome
}

/// (d) The pair that produced a step winner is excluded afterwards.
pub fn winner_pair_is_excluded_in_later_steps() -> ScenarioOutcome {
    let outcome = run(
        vec![
            opt_rule("SA", "CAND_A", None),
            opt_rule("SB", "CAND_B", None),
            opt_rule("SC", "CAND_C", None),
        ],
        ScriptedEvaluator::new(vec![
            ("P0", finite(10.0)),
            ("CAND_A", finite(5.0)),
            ("CAND_B", wrong(1)),
            ("CAND_C", wrong(1)),
        ]),
        ScriptedEmbedder::new(vec![("P0", vec![0.0, 0.0]), ("CAND_A", vec![0.0, 0.0])]),
        vec![
            ("A", vec![1.0, 0.0]),
            ("B", vec![2.0, 0.0]),
            ("C", vec![3.0, 0.0]),
        ],
        ras_config(2, 2),
    );
    assert_eq!(outcome.trace.steps[0].retrieved, vec!["A", "B"]);
    assert!(outcome.trace.steps[0].advanced);
    assert_eq!(outcome.trace.steps[1].retrieved, vec!["B", "C"]);
    assert!(
        !outcome.trace.steps[1].retrieved.contains(&"A".to_string()),
        "the winning pair must not be retrieved again"
    );
    assert_eq!(
        outcome.trace.used_pair_keys,
        ["A".to_string()].into_iter().collect()
    );
    outcome
}

/// (e) Pairs from failed steps stay eligible; only winner pairs are excluded.
pub fn failed_step_pairs_stay_eligible() -> ScenarioOutcome {
    let outcome = run(
        vec![
            opt_rule("SA", "CAND_A1", Some(1)),
            opt_rule("SA", "CAND_A2", None),
            opt_rule("SB", "CAND_B", None),
            opt_rule("SC", "CAND_C", None),
        ],
        ScriptedEvaluator::new(vec![
            ("P0", finite(10.0)),
            ("CAND_A1", wrong(1)),
            ("CAND_A2", finite(4.0)),
            ("CAND_B", wrong(2)),
            ("CAND_C", wrong(3)),
        ]),
        ScriptedEmbedder::new(vec![("P0", vec![0.0, 0.0]), ("CAND_A2", vec![0.0, 0.0])]),
        vec![
            ("A", vec![1.0, 0.0]),
            ("B", vec![2.0, 0.0]),
            ("C", vec![3.0, 0.0]),
        ],
        ras_config(2, 3),
    );
    let steps = &outcome.trace.steps;
    assert_eq!(steps[0].retrieved, vec!["A", "B"]);
    assert!(!steps[0].advanced);
    assert_eq!(
        steps[1].retrieved,
        vec!["A", "B"],
        "a failed step must not exclude its pairs"
    );
    assert!(steps[1].advanced);
    assert_eq!(steps[1].chosen.source, "CAND_A2");
    assert_eq!(steps[2].retrieved, vec!["B", "C"]);
    assert_eq!(
        outcome.trace.used_pair_keys,
        ["A".to_string()].into_iter().collect()
    );
    outcome
}

/// (f) Exactly k·m optimization calls when nothing errors.
pub fn budget_is_exactly_k_times_m() -> ScenarioOutcome {
    let generic = MockRule {
        role: Some(PromptRole::OptimizePair),
        user_contains: vec![],
        times: None,
        response: "{\"optimized_code\": \"CAND_X\"}".into(),
    };
    let outcome = run(
        vec![generic],
        ScriptedEvaluator::new(vec![("P0", finite(10.0)), ("CAND_X", finite(1.0))]),
        ScriptedEmbedder::new(vec![("P0", vec![0.0, 0.0]), ("CAND_X", vec![0.0, 0.0])]),
        vec![
            ("A", vec![1.0, 0.0]),
            ("B", vec![2.0, 0.0]),
            ("C", vec![3.0, 0.0]),
            ("D", vec![4.0, 0.0]),
            ("E", vec![5.0, 0.0]),
        ],
        ras_config(3, 2),
    );
    assert_eq!(outcome.optimize_calls, 3 * 2, "budget must be exactly k*m");
    assert_eq!(outcome.context_calls, 0, "code mode never describes");
    outcome
}

/// Runs all six scripts and returns their traces for cross-cutting checks.
pub fn run_all() -> Vec<ScenarioOutcome> {
    vec![
        argmax_selects_fastest_correct(),
        all_failed_candidates_fall_back(),
        final_fallback_returns_p0(),
        winner_pair_is_excluded_in_later_steps(),
        failed_step_pairs_stay_eligible(),
        budget_is_exactly_k_times_m(),
    ]
}

/// Every trace from the scenario suite keeps a non-decreasing chosen score.
pub fn assert_monotone(trace: &SearchTrace) {
    let mut last: Option<&Score> = None;
    for step in &trace.steps {
        if let Some(prev) = last {
            assert_ne!(
                step.chosen_score.quality_cmp(prev),
                std::cmp::Ordering::Less,
                "chosen score regressed at step {}",
                step.step_index
            );
        }
        last = Some(&step.chosen_score);
    }
}
