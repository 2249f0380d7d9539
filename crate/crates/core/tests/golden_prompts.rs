//! Golden-file tests pinning every prompt template rendering byte-exactly.
//! Run with UPDATE_GOLDEN=1 to regenerate after an intentional change.

mod common;

use std::path::PathBuf;

use common::{golden_slots, prompt_document};
use rasopt::llm::PromptRole;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

fn check(role: PromptRole) {
    let name = format!("{}.txt", role.name());
    let path = golden_dir().join(&name);
    let rendered = prompt_document(role, golden_slots(role));
    if std::env::var("UPDATE_GOLDEN").is_ok() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, &rendered).unwrap();
        return;
    }
    let golden = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {name}: {e}; run with UPDATE_GOLDEN=1"));
    assert_eq!(
        rendered,
        golden,
        "template for {} drifted from its golden file",
        role.name()
    );
}

#[test]
fn golden_context() {
    check(PromptRole::Context);
}

#[test]
fn golden_optimize_pair() {
    check(PromptRole::OptimizePair);
}

#[test]
fn golden_optimize_multi() {
    check(PromptRole::OptimizeMulti);
}

#[test]
fn golden_instruct_only_epsr() {
    check(PromptRole::InstructOnlyEpsr);
}

#[test]
fn golden_instruct_only_ip() {
    check(PromptRole::InstructOnlyIp);
}

#[test]
fn golden_decompose() {
    check(PromptRole::Decompose);
}

#[test]
fn golden_apply_edit() {
    check(PromptRole::ApplyEdit);
}

#[test]
fn golden_generalize_edit() {
    check(PromptRole::GeneralizeEdit);
}

#[test]
fn golden_optimize_atomic() {
    check(PromptRole::OptimizeAtomic);
}

#[test]
fn every_role_has_a_golden_file() {
    if std::env::var("UPDATE_GOLDEN").is_ok() {
        return;
    }
    for role in common::ALL_ROLES {
        let path = golden_dir().join(format!("{}.txt", role.name()));
        assert!(path.is_file(), "no golden file for {}", role.name());
    }
}
