//! Every reported metric: mean best speedup, % optimized, character-level
//! edit distance, human speedup, timing correlations, and report documents.

use serde::{Deserialize, Serialize};

use crate::corpus::ProgramPair;
use crate::harness::{speedup, Evaluate, HarnessError};
use crate::search::SearchTrace;

/// A program counts as optimized when its speedup reaches this factor.
pub const OPTIMIZED_THRESHOLD: f64 = 1.1;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("series too short: need at least {need} points, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("correlation is undefined: a series has zero variance")]
    ZeroVariance,
    #[error("series contains a non-finite value")]
    NonFinite,
    #[error("threshold must exceed 1")]
    BadThreshold,
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

/// Outcome of one optimization run, as reports consume it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub program_id: String,
    pub baseline_time: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_time: Option<f64>,
    pub speedup: f64,
    pub optimized: bool,
    pub trace_ref: String,
}

/// One row of the per-step series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetricsRow {
    pub step_index: usize,
    pub mean_best_speedup: f64,
    pub pct_optimized: f64,
    pub mean_edit_distance: f64,
}

/// Arithmetic mean of run speedups.
pub fn mean_best_speedup(results: &[RunResult]) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(results.iter().map(|r| r.speedup).sum::<f64>() / results.len() as f64)
}

/// Fraction of runs with speedup at or above the threshold.
pub fn pct_optimized(results: &[RunResult], threshold: f64) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if threshold <= 1.0 {
        return Err(MetricsError::BadThreshold);
    }
    let hits = results.iter().filter(|r| r.speedup >= threshold).count();
    Ok(hits as f64 / results.len() as f64)
}

/// Character-level Levenshtein distance with unit insert/delete/substitute
/// costs. Two-row dynamic program.
pub fn edit_distance(a: &str, b: &str) -> usize {
    if a == b {
        return 0;
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (short, long) = if a.len() <= b.len() {
        (&a, &b)
    } else {
        (&b, &a)
    };
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (j, lc) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = j + 1;
        for (i, sc) in short.iter().enumerate() {
            let up = row[i + 1];
            row[i + 1] = if sc == lc {
                diag
            } else {
                1 + diag.min(up).min(row[i])
            };
            diag = up;
        }
    }
    *row.last().expect("row is non-empty")
}

/// Mean edit distance over consecutive chosen programs across traces.
///
/// The chain for a trace is p0, then each step's chosen program; fallback
/// steps re-encounter the same program and contribute 0 unless
/// `include_fallback` is off. `step_filter` restricts to one step index
/// (1-based) for per-step series.
pub fn mean_edit_distance(
    traces: &[SearchTrace],
    step_filter: Option<usize>,
    include_fallback: bool,
) -> Result<f64, MetricsError> {
    if traces.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut total = 0usize;
    let mut count = 0usize;
    for trace in traces {
        let mut previous = &trace.p0;
        for step in &trace.steps {
            let included = step_filter.is_none_or(|want| step.step_index == want)
                && (include_fallback || step.advanced);
            if included {
                total += edit_distance(&previous.source, &step.chosen.source);
                count += 1;
            }
            previous = &step.chosen;
        }
    }
    if count == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok(total as f64 / count as f64)
}

/// Human-speedup summary: mean clamped speedup of the corpus-provided fast
/// counterpart over the slow program, measured by the evaluator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HumanSpeedup {
    pub mean: f64,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
}

pub fn human_speedup(
    test_pairs: &[ProgramPair],
    evaluator: &dyn Evaluate,
) -> Result<HumanSpeedup, MetricsError> {
    if test_pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut speedups = Vec::new();
    let mut skipped = 0usize;
    for pair in test_pairs {
        let slow = evaluator.evaluate(&pair.slow)?;
        if !slow.score.is_finite() {
            skipped += 1;
            continue;
        }
        let fast = evaluator.evaluate(&pair.fast)?;
        speedups.push(speedup(&slow.score, &fast.score)?);
    }
    if speedups.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(HumanSpeedup {
        mean: speedups.iter().sum::<f64>() / speedups.len() as f64,
        pairs_used: speedups.len(),
        pairs_skipped: skipped,
    })
}

/// Pearson and Spearman correlation of two timing series.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub n: usize,
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Midrank ranking: ties receive the average of the ranks they span.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Standard product-moment and rank correlations of the full-suite vs subset
/// running times; both series must have at least 3 points and nonzero
/// variance.
pub fn timing_correlation(
    full_times: &[f64],
    subset_times: &[f64],
) -> Result<Correlation, MetricsError> {
    if full_times.len() != subset_times.len() {
        return Err(MetricsError::LengthMismatch {
            left: full_times.len(),
            right: subset_times.len(),
        });
    }
    if full_times.len() < 3 {
        return Err(MetricsError::TooShort {
            need: 3,
            got: full_times.len(),
        });
    }
    if full_times
        .iter()
        .chain(subset_times)
        .any(|v| !v.is_finite())
    {
        return Err(MetricsError::NonFinite);
    }
    let pearson_r = pearson(full_times, subset_times)?;
    let rx = midranks(full_times);
    let ry = midranks(subset_times);
    let spearman_rho = pearson(&rx, &ry)?;
    Ok(Correlation {
        pearson_r,
        spearman_rho,
        n: full_times.len(),
    })
}

/// Derives run results from traces; traces whose source program never scored
/// finite are skipped (they carry a diagnostic instead of a result).
pub fn run_results(traces: &[SearchTrace], threshold: f64) -> Vec<RunResult> {
    traces
        .iter()
        .filter_map(|trace| {
            let baseline = trace.p0_score.seconds()?;
            let ratio = speedup(&trace.p0_score, &trace.final_score).ok()?;
            Some(RunResult {
                program_id: trace.p0.program_id.clone(),
                baseline_time: baseline,
                final_time: trace.final_score.seconds(),
                speedup: ratio,
                optimized: ratio >= threshold,
                trace_ref: trace.p0.program_id.clone(),
            })
        })
        .collect()
}

/// Per-step series over the traces: speedup of each step's chosen program,
/// fraction optimized, and mean edit distance at that step.
pub fn per_step_rows(traces: &[SearchTrace], threshold: f64) -> Vec<StepMetricsRow> {
    let max_steps = traces.iter().map(|t| t.steps.len()).max().unwrap_or(0);
    let mut rows = Vec::with_capacity(max_steps);
    for step_index in 1..=max_steps {
        let mut speedups = Vec::new();
        for trace in traces {
            let Some(baseline) = trace.p0_score.seconds() else {
                continue;
            };
            let Some(step) = trace.steps.get(step_index - 1) else {
                continue;
            };
            if let Some(secs) = step.chosen_score.seconds() {
                speedups.push((baseline / secs).max(1.0));
            }
        }
        if speedups.is_empty() {
            continue;
        }
        let mean = speedups.iter().sum::<f64>() / speedups.len() as f64;
        let pct =
            speedups.iter().filter(|s| **s >= threshold).count() as f64 / speedups.len() as f64;
        let med = mean_edit_distance(traces, Some(step_index), true).unwrap_or(0.0);
        rows.push(StepMetricsRow {
            step_index,
            mean_best_speedup: mean,
            pct_optimized: pct,
            mean_edit_distance: med,
        });
    }
    rows
}

/// Published results for each method on the full PIE benchmark (GPT-4o
/// driving every role, gem5 timing, 4080 training pairs, 973 test programs).
/// Reports carry them as reference points; they are not reproducible at desk
/// scale and are never asserted by tests.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MethodReference {
    pub method: &'static str,
    pub mean_best_speedup: f64,
    pub pct_optimized: f64,
}

pub const REFERENCE_RESULTS: &[MethodReference] = &[
    MethodReference {
        method: "ras",
        mean_best_speedup: 8.01,
        pct_optimized: 0.9640,
    },
    MethodReference {
        method: "aegis",
        mean_best_speedup: 6.08,
        pct_optimized: 0.9065,
    },
    MethodReference {
        method: "no_contextual",
        mean_best_speedup: 5.78,
        pct_optimized: 0.8520,
    },
    MethodReference {
        method: "aegis_no_contextual",
        mean_best_speedup: 3.84,
        pct_optimized: 0.7554,
    },
    MethodReference {
        method: "dynamic_retrieval",
        mean_best_speedup: 4.42,
        pct_optimized: 0.8191,
    },
    MethodReference {
        method: "instruct_only_epsr",
        mean_best_speedup: 2.30,
        pct_optimized: 0.5447,
    },
    MethodReference {
        method: "instruct_only_ip",
        mean_best_speedup: 2.16,
        pct_optimized: 0.5632,
    },
    MethodReference {
        method: "human",
        mean_best_speedup: 3.63,
        pct_optimized: 0.9887,
    },
];

/// Published mean edit distances over search steps on the same benchmark.
pub const REFERENCE_EDIT_DISTANCES: &[(&str, f64)] = &[
    ("aegis", 213.05),
    ("ras", 257.77),
    ("aegis_no_contextual", 203.24),
    ("ras_no_contextual", 221.49),
];

/// Published full-suite vs 5-case-subset timing correlation (Pearson r,
/// Spearman rho).
pub const REFERENCE_TIMING_CORRELATION: (f64, f64) = (0.89, 0.86);

/// Report output encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format {other}")),
        }
    }
}

fn provenance(traces: &[SearchTrace]) -> serde_json::Value {
    let mut methods: Vec<String> = traces
        .iter()
        .map(|t| t.config.method.name().to_string())
        .collect();
    methods.sort();
    methods.dedup();
    let mut digest_input = String::new();
    let mut calls = 0usize;
    for trace in traces {
        for digest in &trace.gateway_digests {
            digest_input.push_str(digest);
            digest_input.push('\n');
            calls += 1;
        }
    }
    serde_json::json!({
        "methods": methods,
        "gateway_calls": calls,
        "gateway_digest": crate::content_hash(digest_input.as_bytes()),
        "configs": traces.iter().map(|t| serde_json::to_value(&t.config).expect("config serializes")).collect::<Vec<_>>(),
    })
}

/// Renders a deterministic report document: same inputs, identical bytes.
pub fn emit_report(
    results: &[RunResult],
    traces: &[SearchTrace],
    threshold: f64,
    format: ReportFormat,
) -> Result<String, MetricsError> {
    let rows = per_step_rows(traces, threshold);
    match format {
        ReportFormat::Json => {
            let aggregate = if results.is_empty() {
                serde_json::Value::Null
            } else {
                serde_json::json!({
                    "n": results.len(),
                    "mean_best_speedup": mean_best_speedup(results)?,
                    "pct_optimized": pct_optimized(results, threshold)?,
                    "threshold": threshold,
                    "mean_edit_distance": mean_edit_distance(traces, None, true).ok(),
                })
            };
            let doc = serde_json::json!({
                "results": results,
                "aggregate": aggregate,
                "per_step": rows,
                "reference_results": REFERENCE_RESULTS,
                "reference_edit_distances": REFERENCE_EDIT_DISTANCES,
                "reference_timing_correlation": {
                    "pearson_r": REFERENCE_TIMING_CORRELATION.0,
                    "spearman_rho": REFERENCE_TIMING_CORRELATION.1,
                },
                "provenance": provenance(traces),
            });
            Ok(format!(
                "{}\n",
                serde_json::to_string_pretty(&doc).expect("report serializes")
            ))
        }
        ReportFormat::Csv => {
            let mut out =
                String::from("step_index,mean_best_speedup,pct_optimized,mean_edit_distance\n");
            for row in &rows {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    row.step_index,
                    row.mean_best_speedup,
                    row.pct_optimized,
                    row.mean_edit_distance
                ));
            }
            Ok(out)
        }
        ReportFormat::Markdown => {
            let mut out = String::from("# Optimization report\n\n");
            out.push_str("| program | baseline (s) | final (s) | speedup | optimized |\n");
            out.push_str("|---|---|---|---|---|\n");
            for r in results {
                out.push_str(&format!(
                    "| {} | {:.6} | {} | {:.4} | {} |\n",
                    r.program_id,
                    r.baseline_time,
                    r.final_time
                        .map(|t| format!("{t:.6}"))
                        .unwrap_or_else(|| "-".into()),
                    r.speedup,
                    if r.optimized { "yes" } else { "no" },
                ));
            }
            if !results.is_empty() {
                out.push_str(&format!(
                    "| **aggregate ({} runs)** | | | **{:.4}** | **{:.2}%** |\n",
                    results.len(),
                    mean_best_speedup(results)?,
                    100.0 * pct_optimized(results, threshold)?,
                ));
            }
            if !rows.is_empty() {
                out.push_str("\n## Per step\n\n");
                out.push_str("| step | mean best speedup | % optimized | mean edit distance |\n");
                out.push_str("|---|---|---|---|\n");
                for row in &rows {
                    out.push_str(&format!(
                        "| {} | {:.4} | {:.2}% | {:.2} |\n",
                        row.step_index,
                        row.mean_best_speedup,
                        100.0 * row.pct_optimized,
                        row.mean_edit_distance
                    ));
                }
            }
            out.push_str("\n## Reference results (full PIE benchmark, GPT-4o + gem5)\n\n");
            out.push_str("| method | mean best speedup | % optimized |\n|---|---|---|\n");
            for r in REFERENCE_RESULTS {
                out.push_str(&format!(
                    "| {} | {} | {} |\n",
                    r.method, r.mean_best_speedup, r.pct_optimized
                ));
            }
            Ok(out)
        }
    }
}
