//! Prompt templates for every LLM role.
//!
//! Rendering is a pure function of (role, slots): the same inputs produce
//! byte-identical requests. Golden-file tests pin each rendering, so any
//! template drift fails CI.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, LlmError, Sampling};

/// One template per role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptRole {
    /// Describe a program's algorithm in one sentence (JSON key `algorithm`).
    Context,
    /// Optimize with a single retrieved slow-fast pair in context.
    OptimizePair,
    /// Optimize with several retrieved pairs in one prompt.
    OptimizeMulti,
    /// Instruct-only, expert-programmer system role (JSON output).
    InstructOnlyEpsr,
    /// Instruct-only, plain instruction prompt (raw code output).
    InstructOnlyIp,
    /// Decompose a slow-fast pair into a numbered edit sequence.
    Decompose,
    /// Apply one natural-language edit to a program.
    ApplyEdit,
    /// Generalize an edit description beyond its origin program.
    GeneralizeEdit,
    /// Optimize guided by a retrieved atomic edit and its exemplar pair.
    OptimizeAtomic,
}

impl PromptRole {
    pub fn name(&self) -> &'static str {
        match self {
            PromptRole::Context => "context",
            PromptRole::OptimizePair => "optimize_pair",
            PromptRole::OptimizeMulti => "optimize_multi",
            PromptRole::InstructOnlyEpsr => "instruct_only_epsr",
            PromptRole::InstructOnlyIp => "instruct_only_ip",
            PromptRole::Decompose => "decompose",
            PromptRole::ApplyEdit => "apply_edit",
            PromptRole::GeneralizeEdit => "generalize_edit",
            PromptRole::OptimizeAtomic => "optimize_atomic",
        }
    }

    /// The structured key the role's response is expected to carry, when the
    /// template asks for JSON output.
    pub fn response_key(&self) -> Option<&'static str> {
        match self {
            PromptRole::Context => Some("algorithm"),
            PromptRole::OptimizePair
            | PromptRole::OptimizeMulti
            | PromptRole::InstructOnlyEpsr
            | PromptRole::ApplyEdit
            | PromptRole::OptimizeAtomic => Some("optimized_code"),
            PromptRole::GeneralizeEdit => Some("rewritten_optimization"),
            PromptRole::Decompose | PromptRole::InstructOnlyIp => None,
        }
    }

    /// Default sampling: diversity where multiple candidates are drawn,
    /// determinism for descriptions and decompositions.
    pub fn default_sampling(&self) -> Sampling {
        let temperature = match self {
            PromptRole::Context | PromptRole::Decompose | PromptRole::GeneralizeEdit => 0.0,
            _ => 0.7,
        };
        Sampling {
            temperature,
            max_tokens: 4096,
        }
    }
}

impl fmt::Display for PromptRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A value bound to a template slot.
#[derive(Debug, Clone, PartialEq)]
pub enum SlotValue {
    Text(String),
    /// Ordered (slow, fast) source pairs for the multi-example template.
    Pairs(Vec<(String, String)>),
}

/// Named slot bindings for [`render`]. Every template requires an exact slot
/// set; missing or extra names are errors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Slots(BTreeMap<String, SlotValue>);

impl Slots {
    pub fn new() -> Self {
        Slots::default()
    }

    pub fn text(mut self, name: &str, value: impl Into<String>) -> Self {
        self.0
            .insert(name.to_string(), SlotValue::Text(value.into()));
        self
    }

    pub fn pairs(mut self, name: &str, value: Vec<(String, String)>) -> Self {
        self.0.insert(name.to_string(), SlotValue::Pairs(value));
        self
    }

    fn take_text(&mut self, role: PromptRole, name: &str) -> Result<String, LlmError> {
        match self.0.remove(name) {
            Some(SlotValue::Text(t)) => Ok(t),
            Some(SlotValue::Pairs(_)) => Err(LlmError::Template {
                role,
                detail: format!("slot \"{name}\" must be text"),
            }),
            None => Err(LlmError::Template {
                role,
                detail: format!("missing slot \"{name}\""),
            }),
        }
    }

    fn take_pairs(
        &mut self,
        role: PromptRole,
        name: &str,
    ) -> Result<Vec<(String, String)>, LlmError> {
        match self.0.remove(name) {
            Some(SlotValue::Pairs(p)) => Ok(p),
            Some(SlotValue::Text(_)) => Err(LlmError::Template {
                role,
                detail: format!("slot \"{name}\" must be a pair list"),
            }),
            None => Err(LlmError::Template {
                role,
                detail: format!("missing slot \"{name}\""),
            }),
        }
    }

    fn finish(self, role: PromptRole) -> Result<(), LlmError> {
        if let Some(extra) = self.0.keys().next() {
            return Err(LlmError::Template {
                role,
                detail: format!("unexpected slot \"{extra}\""),
            });
        }
        Ok(())
    }
}

const SYSTEM_CONTEXT: &str = "You are an expert programmer who has been provided with a program solving a programming problem, called the source program. You need to identify the algorithm being used to solve the problem, and your goal is to generate a JSON object with the key \"algorithm\" which has the value as one sentence describing the algorithm used in the code snippet.";

const SYSTEM_OPTIMIZE_PAIR: &str = "You are an expert programmer who needs to optimize a given program, called the source program. You are given one pair of fast and slow programs as an example, which are presented as a pair where \"slower version\" refers to the slow code and \"optimized version\" refers to the faster, more optimal version of the same program. The last program with the label \"slower version\" is the source program whose optimized version you need to generate. Rewrite the source program in a way that incorporates all of the optimizations in the example, and return a JSON-formatted string where the rewritten code is stored with the key \"optimized_code\". Do not output anything other than C++ code.";

const SYSTEM_OPTIMIZE_MULTI: &str = "You are an expert programmer who needs to optimize a given program, called the source program. You are given several pairs of fast and slow programs, called examples, which are presented as pairs where \"slower version\" refers to the slow code and \"optimized version\" refers to the faster, more optimal version of the same program. The very last program with the label \"slower version\" is the source program whose optimized version you need to generate. Rewrite the source program in a way that incorporates all of the optimizations in the examples, and return a JSON-formatted string where the rewritten code is stored with the key \"optimized_code\". Do not output anything other than C++ code.";

const SYSTEM_INSTRUCT_EPSR: &str = "You are an expert programmer who needs to optimize a given program. You are given the source code of the program. Rewrite the source code in a way that optimizes performance such that the program executes faster, and return a JSON-formatted string where the rewritten code is stored with the key \"optimized_code\". Do not output anything other than C++ code.";

const SYSTEM_DECOMPOSE: &str = "You are an expert programmer who needs to decompose a sequence of edits to a program that have been made to optimize the program's performance. You are provided with the source program (the initial state) and the target program (the final state). Describe the changes made to the source program as a sequence of edits in the format of a JSON file where each key marks the step in the sequence. For example, {\"1\": <description of the first edit in the sequence>, \"2\": <description of the second edit in the sequence>, ... \"N\": <description of the final edit in the sequence>}. Make sure to describe each edit alongside why it may improve performance.";

const SYSTEM_APPLY_EDIT: &str = "You are an expert programmer who needs to optimize a given program. You are given the description of the optimization to be performed as well as the source code of the program. Rewrite the source code in a way that incorporates the optimization and improves its performance, and return a JSON-formatted string where the rewritten code is stored with the key \"optimized_code\". Do not output anything other than C++ code.";

const SYSTEM_GENERALIZE: &str = "You are an expert programmer. You are provided with the description of a program optimization, which, when applied to the given program, results in an improvement in program performance. Rewrite the program optimization so that it can be applied more generally to any program. Return a JSON-formatted string where the rewritten optimization is stored with the key \"rewritten_optimization\". Do not output anything other than JSON.";

const SYSTEM_OPTIMIZE_ATOMIC: &str = "You are an expert programmer who needs to optimize a given program, called the source program. You are given the description of an optimization that is to be performed on the given program, as well as an example showing how to apply the optimization on an example program (called the example source) to get a target program (called the example target). Rewrite the source code in a way that incorporates all of the optimizations, and return a JSON-formatted string where the rewritten code is stored with the key \"optimized_code\". Do not output anything other than C++ code.";

fn pair_block(slow: &str, fast: &str) -> String {
    format!("# slower version:\n{slow}\n# optimized version of the same code:\n{fast}")
}

fn source_block(program: &str) -> String {
    format!("# slower version:\n{program}\n# optimized version of the same code:\n")
}

/// Renders a role's template with the given slot bindings.
pub fn render(role: PromptRole, slots: Slots) -> Result<ChatRequest, LlmError> {
    let mut slots = slots;
    let (system, user) = match role {
        PromptRole::Context => {
            let program = slots.take_text(role, "program")?;
            (
                SYSTEM_CONTEXT.to_string(),
                format!("Source Program:\n{program}"),
            )
        }
        PromptRole::OptimizePair => {
            let slow = slots.take_text(role, "slow_example")?;
            let fast = slots.take_text(role, "fast_example")?;
            let program = slots.take_text(role, "program")?;
            (
                SYSTEM_OPTIMIZE_PAIR.to_string(),
                format!("{}\n\n{}", pair_block(&slow, &fast), source_block(&program)),
            )
        }
        PromptRole::OptimizeMulti => {
            let examples = slots.take_pairs(role, "examples")?;
            let program = slots.take_text(role, "program")?;
            if examples.is_empty() {
                return Err(LlmError::Template {
                    role,
                    detail: "slot \"examples\" must contain at least one pair".into(),
                });
            }
            let mut user = String::new();
            for (slow, fast) in &examples {
                user.push_str(&pair_block(slow, fast));
                user.push_str("\n\n");
            }
            user.push_str(&source_block(&program));
            (SYSTEM_OPTIMIZE_MULTI.to_string(), user)
        }
        PromptRole::InstructOnlyEpsr => {
            let program = slots.take_text(role, "program")?;
            (
                SYSTEM_INSTRUCT_EPSR.to_string(),
                format!("Source Code: {program}"),
            )
        }
        PromptRole::InstructOnlyIp => {
            let program = slots.take_text(role, "program")?;
            (
                String::new(),
                format!(
                    "Given the program below, improve its performance:\n\n### Program: {program}\n\n### Optimized Version:"
                ),
            )
        }
        PromptRole::Decompose => {
            let source = slots.take_text(role, "source")?;
            let target = slots.take_text(role, "target")?;
            (
                SYSTEM_DECOMPOSE.to_string(),
                format!("Source Program: {source}\nTarget Program: {target}"),
            )
        }
        PromptRole::ApplyEdit => {
            let program = slots.take_text(role, "program")?;
            let optimization = slots.take_text(role, "optimization")?;
            (
                SYSTEM_APPLY_EDIT.to_string(),
                format!("Source Program: {program}\nOptimization: {optimization}"),
            )
        }
        PromptRole::GeneralizeEdit => {
            let edit = slots.take_text(role, "edit")?;
            let program = slots.take_text(role, "program")?;
            (
                SYSTEM_GENERALIZE.to_string(),
                format!("Program Optimization: {edit}\nProgram: {program}"),
            )
        }
        PromptRole::OptimizeAtomic => {
            let program = slots.take_text(role, "program")?;
            let optimization = slots.take_text(role, "optimization")?;
            let example_source = slots.take_text(role, "example_source")?;
            let example_target = slots.take_text(role, "example_target")?;
            (
                SYSTEM_OPTIMIZE_ATOMIC.to_string(),
                format!(
                    "Source Program:\n{program}\nOptimization:\n{optimization}\n\nExample Source:\n{example_source}\nExample Target:\n{example_target}"
                ),
            )
        }
    };
    slots.finish(role)?;
    Ok(ChatRequest {
        role,
        system,
        user,
        sampling: role.default_sampling(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_pure() {
        let a = render(
            PromptRole::Context,
            Slots::new().text("program", "int main(){}"),
        )
        .unwrap();
        let b = render(
            PromptRole::Context,
            Slots::new().text("program", "int main(){}"),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_slot_is_named() {
        let err = render(PromptRole::Context, Slots::new()).unwrap_err();
        assert!(err.to_string().contains("program"), "{err}");
    }

    #[test]
    fn extra_slot_is_rejected() {
        let err = render(
            PromptRole::Context,
            Slots::new().text("program", "x").text("bogus", "y"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn epsr_user_text_matches_shape() {
        let req = render(
            PromptRole::InstructOnlyEpsr,
            Slots::new().text("program", "P"),
        )
        .unwrap();
        assert_eq!(req.user, "Source Code: P");
    }

    #[test]
    fn multi_renders_every_example_block() {
        let examples = (1..=4)
            .map(|i| (format!("slow{i}"), format!("fast{i}")))
            .collect();
        let req = render(
            PromptRole::OptimizeMulti,
            Slots::new()
                .pairs("examples", examples)
                .text("program", "P"),
        )
        .unwrap();
        assert_eq!(req.user.matches("# slower version:").count(), 5);
        assert!(req
            .user
            .ends_with("# optimized version of the same code:\n"));
    }

    #[test]
    fn ip_has_no_system_role() {
        let req = render(
            PromptRole::InstructOnlyIp,
            Slots::new().text("program", "P"),
        )
        .unwrap();
        assert!(req.system.is_empty());
        assert!(req.user.contains("### Program: P"));
    }

    #[test]
    fn sampling_defaults_split_by_role() {
        assert_eq!(PromptRole::Context.default_sampling().temperature, 0.0);
        assert_eq!(PromptRole::Decompose.default_sampling().temperature, 0.0);
        assert_eq!(
            PromptRole::GeneralizeEdit.default_sampling().temperature,
            0.0
        );
        assert_eq!(PromptRole::OptimizePair.default_sampling().temperature, 0.7);
        assert_eq!(PromptRole::ApplyEdit.default_sampling().temperature, 0.7);
    }
}
