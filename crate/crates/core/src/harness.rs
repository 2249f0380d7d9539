//! Compile-run-judge harness producing the extended-real score R(p).
//!
//! A program scores `Finite(t)` only if it compiles, passes every test case,
//! and never times out; otherwise it scores negative infinity with a reason.
//! Between finite scores, smaller running time is better.
//!
//! Timing is pluggable: the default wall-clock policy discards warmup runs and
//! takes the median of measured runs per case, then the mean across cases. A
//! scripted policy maps source hashes to fixed times for fully deterministic
//! runs (correctness still comes from real execution); a hardware-simulator
//! adapter would slot in the same way.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::content_hash;
use crate::corpus::{Program, TestCase, TestSuite};

/// Default per-case wall-clock timeout in seconds.
pub const DEFAULT_TIMEOUT_SECS: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("environment error: {0}")]
    Environment(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no scripted time for source hash {hash}")]
    ScriptedTimeMissing { hash: String },
    #[error("speedup is undefined: the original program's score is not finite")]
    OriginalNotFinite,
}

/// Why a program scored negative infinity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum FailReason {
    CompileError,
    WrongAnswer {
        case_index: usize,
    },
    Timeout,
    RuntimeError {
        case_index: usize,
    },
    /// Candidate never reached evaluation (LLM generation or parse failed).
    GenerationFailed,
}

/// Extended-real evaluation result: a finite running time in seconds, or
/// negative infinity with a failure reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Score {
    Finite { seconds: f64 },
    NegInfinity { reason: FailReason },
}

impl Score {
    pub fn finite(seconds: f64) -> Self {
        assert!(
            seconds > 0.0 && seconds.is_finite(),
            "finite score requires a positive running time"
        );
        Score::Finite { seconds }
    }

    pub fn neg_infinity(reason: FailReason) -> Self {
        Score::NegInfinity { reason }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Score::Finite { .. })
    }

    pub fn seconds(&self) -> Option<f64> {
        match self {
            Score::Finite { seconds } => Some(*seconds),
            Score::NegInfinity { .. } => None,
        }
    }

    /// Total quality order: `Greater` means better. Any finite score beats
    /// negative infinity; between finite scores a smaller time is better; all
    /// negative infinities compare equal regardless of reason.
    pub fn quality_cmp(&self, other: &Score) -> Ordering {
        match (self, other) {
            (Score::Finite { seconds: a }, Score::Finite { seconds: b }) => b.total_cmp(a),
            (Score::Finite { .. }, Score::NegInfinity { .. }) => Ordering::Greater,
            (Score::NegInfinity { .. }, Score::Finite { .. }) => Ordering::Less,
            (Score::NegInfinity { .. }, Score::NegInfinity { .. }) => Ordering::Equal,
        }
    }
}

/// Outcome of one test-case run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Pass,
    Fail,
    Timeout,
    RuntimeError,
}

/// One run of a binary against one test case.
#[derive(Debug, Clone)]
pub struct CaseRun {
    pub status: CaseStatus,
    pub elapsed: f64,
    pub stdout: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    /// 1-based index of the case within the suite it was judged against.
    pub case_index: usize,
    pub status: CaseStatus,
    pub time: f64,
}

/// Full record of evaluating one program against one suite.
///
/// The score is finite exactly when the report covers the whole suite and
/// every case passed; a compile failure leaves `per_case` empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub program_id: String,
    pub score: Score,
    pub per_case: Vec<CaseResult>,
    pub compile_log: String,
}

/// Compiler invocation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompileConfig {
    pub compiler: PathBuf,
    pub flags: Vec<String>,
    pub workdir_root: PathBuf,
    pub cache_dir: PathBuf,
}

impl CompileConfig {
    pub fn new(workdir_root: impl Into<PathBuf>, cache_dir: impl Into<PathBuf>) -> Self {
        CompileConfig {
            compiler: PathBuf::from("g++"),
            flags: vec!["-O3".into(), "--std=c++17".into()],
            workdir_root: workdir_root.into(),
            cache_dir: cache_dir.into(),
        }
    }
}

/// How per-case running times are obtained.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum TimingPolicy {
    /// Wall clock: discard `warmup` runs, report the median of `runs`.
    Wall { warmup: u32, runs: u32 },
    /// Fixed times keyed by source hash; cases are still executed once to
    /// judge correctness. Deterministic by construction.
    Scripted { times: BTreeMap<String, f64> },
}

impl Default for TimingPolicy {
    fn default() -> Self {
        TimingPolicy::Wall { warmup: 1, runs: 3 }
    }
}

impl TimingPolicy {
    pub fn scripted_from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let times: BTreeMap<String, f64> = serde_json::from_str(&text).map_err(|e| {
            HarnessError::Environment(format!(
                "invalid scripted timing file {}: {e}",
                path.display()
            ))
        })?;
        Ok(TimingPolicy::Scripted { times })
    }
}

/// A compiled, content-addressed executable.
#[derive(Debug, Clone)]
pub struct BinaryArtifact {
    pub path: PathBuf,
    pub source_hash: String,
}

/// Compiler outcome: an artifact, or captured diagnostics.
#[derive(Debug, Clone)]
pub enum Compilation {
    Success(BinaryArtifact),
    Failure { log: String },
}

/// Compile-and-run harness with a content-addressed compile cache.
pub struct Harness {
    pub compile_config: CompileConfig,
    pub timing: TimingPolicy,
    pub timeout: Duration,
    pub fail_fast: bool,
    compile_invocations: AtomicU64,
    cache_lock: Mutex<()>,
}

impl Harness {
    pub fn new(compile_config: CompileConfig) -> Self {
        Harness {
            compile_config,
            timing: TimingPolicy::default(),
            timeout: Duration::from_secs_f64(DEFAULT_TIMEOUT_SECS),
            fail_fast: false,
            compile_invocations: AtomicU64::new(0),
            cache_lock: Mutex::new(()),
        }
    }

    pub fn with_timing(mut self, timing: TimingPolicy) -> Self {
        self.timing = timing;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_fail_fast(mut self, fail_fast: bool) -> Self {
        self.fail_fast = fail_fast;
        self
    }

    /// Number of real compiler invocations so far (cache hits excluded).
    pub fn compile_invocations(&self) -> u64 {
        self.compile_invocations.load(AtomicOrdering::SeqCst)
    }

    fn artifact_hash(&self, source: &str) -> String {
        let mut keyed = String::new();
        keyed.push_str(&self.compile_config.compiler.to_string_lossy());
        keyed.push('\0');
        keyed.push_str(&self.compile_config.flags.join("\u{1}"));
        keyed.push('\0');
        keyed.push_str(source);
        content_hash(keyed.as_bytes())
    }

    /// Compiles a program, reusing the cache when the same source has been
    /// built with the same compiler and flags before.
    pub fn compile(&self, program: &Program) -> Result<Compilation, HarnessError> {
        let hash = self.artifact_hash(&program.source);
        let cache = &self.compile_config.cache_dir;
        fs::create_dir_all(cache).map_err(|source| HarnessError::Io {
            path: cache.clone(),
            source,
        })?;
        let bin_path = cache.join(format!("bin-{hash}"));
        let fail_path = cache.join(format!("fail-{hash}.log"));

        {
            let _guard = self.cache_lock.lock().expect("cache lock poisoned");
            if bin_path.is_file() {
                return Ok(Compilation::Success(BinaryArtifact {
                    path: bin_path,
                    source_hash: hash,
                }));
            }
            if fail_path.is_file() {
                let log = fs::read_to_string(&fail_path).unwrap_or_default();
                return Ok(Compilation::Failure { log });
            }
        }

        let work = tempfile::Builder::new()
            .prefix("compile-")
            .tempdir_in(&self.compile_config.workdir_root)
            .map_err(|source| HarnessError::Io {
                path: self.compile_config.workdir_root.clone(),
                source,
            })?;
        let src_path = work.path().join("main.cpp");
        fs::write(&src_path, &program.source).map_err(|source| HarnessError::Io {
            path: src_path.clone(),
            source,
        })?;
        let out_path = work.path().join("a.out");

        self.compile_invocations
            .fetch_add(1, AtomicOrdering::SeqCst);
        let output = Command::new(&self.compile_config.compiler)
            .args(&self.compile_config.flags)
            .arg(&src_path)
            .arg("-o")
            .arg(&out_path)
            .output()
            .map_err(|e| {
                HarnessError::Environment(format!(
                    "cannot run compiler {}: {e}",
                    self.compile_config.compiler.display()
                ))
            })?;

        if output.status.success() {
            let _guard = self.cache_lock.lock().expect("cache lock poisoned");
            if !bin_path.is_file() {
                fs::copy(&out_path, &bin_path).map_err(|source| HarnessError::Io {
                    path: bin_path.clone(),
                    source,
                })?;
            }
            Ok(Compilation::Success(BinaryArtifact {
                path: bin_path,
                source_hash: hash,
            }))
        } else {
            let mut log = String::from_utf8_lossy(&output.stderr).into_owned();
            log.push_str(&String::from_utf8_lossy(&output.stdout));
            let _ = fs::write(&fail_path, &log);
            Ok(Compilation::Failure { log })
        }
    }

    /// Runs a binary on one case: stdin piped from the case input, stdout
    /// captured, hard wall-clock kill at the timeout.
    pub fn run_case(
        &self,
        binary: &BinaryArtifact,
        case: &TestCase,
        timeout: Duration,
    ) -> Result<CaseRun, HarnessError> {
        let work = tempfile::Builder::new()
            .prefix("run-")
            .tempdir_in(&self.compile_config.workdir_root)
            .map_err(|source| HarnessError::Io {
                path: self.compile_config.workdir_root.clone(),
                source,
            })?;

        let start = Instant::now();
        let mut child = Command::new(&binary.path)
            .current_dir(work.path())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| {
                HarnessError::Environment(format!("cannot spawn {}: {e}", binary.path.display()))
            })?;

        let mut stdin = child.stdin.take().expect("stdin piped");
        let input = case.input.clone();
        let writer = std::thread::spawn(move || {
            let _ = stdin.write_all(&input);
            drop(stdin);
        });
        let mut stdout_pipe = child.stdout.take().expect("stdout piped");
        let reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stdout_pipe.read_to_end(&mut buf);
            buf
        });

        let status = child
            .wait_timeout(timeout)
            .map_err(|e| HarnessError::Environment(format!("wait failed: {e}")))?;
        let (status, timed_out) = match status {
            Some(status) => (Some(status), false),
            None => {
                let _ = child.kill();
                let _ = child.wait();
                (None, true)
            }
        };
        let elapsed = start.elapsed().as_secs_f64();
        let _ = writer.join();
        let stdout = reader.join().unwrap_or_default();

        let status = if timed_out {
            CaseStatus::Timeout
        } else if !status.map(|s| s.success()).unwrap_or(false) {
            CaseStatus::RuntimeError
        } else if normalize_output(&stdout) == normalize_output(&case.expected_output) {
            CaseStatus::Pass
        } else {
            CaseStatus::Fail
        };

        Ok(CaseRun {
            status,
            elapsed,
            stdout,
        })
    }

    /// Runs one case under the timing policy: returns its status and the time
    /// to report. A failing run short-circuits the remaining runs of the case.
    fn time_case(
        &self,
        binary: &BinaryArtifact,
        case: &TestCase,
        source_hash: &str,
    ) -> Result<(CaseStatus, f64), HarnessError> {
        match &self.timing {
            TimingPolicy::Wall { warmup, runs } => {
                for _ in 0..*warmup {
                    let run = self.run_case(binary, case, self.timeout)?;
                    if run.status != CaseStatus::Pass {
                        return Ok((run.status, run.elapsed));
                    }
                }
                let mut samples = Vec::with_capacity(*runs as usize);
                for _ in 0..(*runs).max(1) {
                    let run = self.run_case(binary, case, self.timeout)?;
                    if run.status != CaseStatus::Pass {
                        return Ok((run.status, run.elapsed));
                    }
                    samples.push(run.elapsed);
                }
                Ok((CaseStatus::Pass, median(&mut samples)))
            }
            TimingPolicy::Scripted { times } => {
                let run = self.run_case(binary, case, self.timeout)?;
                if run.status != CaseStatus::Pass {
                    return Ok((run.status, run.elapsed));
                }
                let time = times.get(source_hash).copied().ok_or_else(|| {
                    HarnessError::ScriptedTimeMissing {
                        hash: source_hash.to_string(),
                    }
                })?;
                Ok((CaseStatus::Pass, time))
            }
        }
    }

    /// Evaluates a program against a suite. Every case is judged unless
    /// fail-fast is on; the score follows the first failing case.
    pub fn evaluate(
        &self,
        program: &Program,
        suite: &TestSuite,
    ) -> Result<EvaluationReport, HarnessError> {
        assert!(!suite.cases.is_empty(), "suite must be non-empty");
        let binary = match self.compile(program)? {
            Compilation::Success(binary) => binary,
            Compilation::Failure { log } => {
                return Ok(EvaluationReport {
                    program_id: program.program_id.clone(),
                    score: Score::neg_infinity(FailReason::CompileError),
                    per_case: Vec::new(),
                    compile_log: log,
                });
            }
        };
        let source_hash = content_hash(program.source.as_bytes());

        let mut per_case = Vec::with_capacity(suite.cases.len());
        for (idx, case) in suite.cases.iter().enumerate() {
            let case_index = idx + 1;
            let (status, time) = self.time_case(&binary, case, &source_hash)?;
            per_case.push(CaseResult {
                case_index,
                status,
                time,
            });
            if status != CaseStatus::Pass && self.fail_fast {
                break;
            }
        }

        let first_failure = per_case.iter().find(|c| c.status != CaseStatus::Pass);
        let score = match first_failure {
            Some(fail) => Score::neg_infinity(match fail.status {
                CaseStatus::Fail => FailReason::WrongAnswer {
                    case_index: fail.case_index,
                },
                CaseStatus::Timeout => FailReason::Timeout,
                CaseStatus::RuntimeError => FailReason::RuntimeError {
                    case_index: fail.case_index,
                },
                CaseStatus::Pass => unreachable!(),
            }),
            None => {
                let mean = per_case.iter().map(|c| c.time).sum::<f64>() / per_case.len() as f64;
                Score::finite(mean.max(f64::MIN_POSITIVE))
            }
        };

        Ok(EvaluationReport {
            program_id: program.program_id.clone(),
            score,
            per_case,
            compile_log: String::new(),
        })
    }
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2.0
    }
}

/// Judge normalization: trailing whitespace per line and trailing blank lines
/// are ignored before byte comparison.
pub fn normalize_output(bytes: &[u8]) -> Vec<u8> {
    let mut lines: Vec<&[u8]> = bytes.split(|&b| b == b'\n').collect();
    let trimmed: Vec<Vec<u8>> = lines
        .drain(..)
        .map(|line| {
            let mut end = line.len();
            while end > 0 && matches!(line[end - 1], b' ' | b'\t' | b'\r') {
                end -= 1;
            }
            line[..end].to_vec()
        })
        .collect();
    let mut keep = trimmed.len();
    while keep > 0 && trimmed[keep - 1].is_empty() {
        keep -= 1;
    }
    trimmed[..keep].join(&b'\n')
}

/// Speedup of a candidate over the original, clamped below at 1: a failed
/// candidate scores exactly 1 because the original can always be returned.
pub fn speedup(original: &Score, candidate: &Score) -> Result<f64, HarnessError> {
    let original_secs = original.seconds().ok_or(HarnessError::OriginalNotFinite)?;
    Ok(match candidate.seconds() {
        Some(candidate_secs) => (original_secs / candidate_secs).max(1.0),
        None => 1.0,
    })
}

/// Evaluation against a fixed suite, as the search loop sees it.
pub trait Evaluate: Send + Sync {
    fn evaluate(&self, program: &Program) -> Result<EvaluationReport, HarnessError>;
}

/// Real evaluator: a harness plus the suite to judge against, with a
/// content-addressed result cache and optional per-program audit records.
pub struct SuiteEvaluator<'h> {
    harness: &'h Harness,
    suite: TestSuite,
    cache: Mutex<HashMap<String, EvaluationReport>>,
    audit_dir: Option<PathBuf>,
}

impl<'h> SuiteEvaluator<'h> {
    pub fn new(harness: &'h Harness, suite: TestSuite) -> Self {
        SuiteEvaluator {
            harness,
            suite,
            cache: Mutex::new(HashMap::new()),
            audit_dir: None,
        }
    }

    /// Writes every evaluation report under `dir` for audit.
    pub fn with_audit_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.audit_dir = Some(dir.into());
        self
    }

    pub fn suite(&self) -> &TestSuite {
        &self.suite
    }
}

impl Evaluate for SuiteEvaluator<'_> {
    fn evaluate(&self, program: &Program) -> Result<EvaluationReport, HarnessError> {
        let key = content_hash(program.source.as_bytes());
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let report = self.harness.evaluate(program, &self.suite)?;
        if let Some(dir) = &self.audit_dir {
            fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
                path: dir.clone(),
                source,
            })?;
            let path = dir.join(format!("{}.json", sanitize_id(&program.program_id)));
            let body = serde_json::to_string_pretty(&report).expect("report serializes");
            fs::write(&path, body).map_err(|source| HarnessError::Io { path, source })?;
        }
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, report.clone());
        Ok(report)
    }
}

fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Origin;

    fn program(source: &str) -> Program {
        Program {
            source: source.to_string(),
            problem_id: "p".into(),
            program_id: format!("prog-{}", &content_hash(source.as_bytes())[..8]),
            origin: Origin::Corpus,
        }
    }

    fn harness(dir: &Path) -> Harness {
        let work = dir.join("work");
        let cache = dir.join("cache");
        fs::create_dir_all(&work).unwrap();
        Harness::new(CompileConfig::new(work, cache))
            .with_timing(TimingPolicy::Wall { warmup: 0, runs: 1 })
            .with_timeout(Duration::from_secs(5))
    }

    const ECHO_SUM: &str = r#"
#include <iostream>
int main() { long long a, b; std::cin >> a >> b; std::cout << a + b << "\n"; return 0; }
"#;

    fn sum_suite(n: usize) -> TestSuite {
        TestSuite {
            problem_id: "p".into(),
            cases: (1..=n)
                .map(|i| TestCase {
                    input: format!("{i} {i}\n").into_bytes(),
                    expected_output: format!("{}\n", 2 * i).into_bytes(),
                })
                .collect(),
        }
    }

    #[test]
    fn score_ordering_is_total_and_favors_smaller_time() {
        let fast = Score::finite(1.0);
        let slow = Score::finite(2.0);
        let dead = Score::neg_infinity(FailReason::Timeout);
        let dead2 = Score::neg_infinity(FailReason::CompileError);
        assert_eq!(fast.quality_cmp(&slow), Ordering::Greater);
        assert_eq!(slow.quality_cmp(&fast), Ordering::Less);
        assert_eq!(fast.quality_cmp(&fast), Ordering::Equal);
        assert_eq!(fast.quality_cmp(&dead), Ordering::Greater);
        assert_eq!(dead.quality_cmp(&fast), Ordering::Less);
        assert_eq!(dead.quality_cmp(&dead2), Ordering::Equal);
    }

    #[test]
    fn normalization_ignores_trailing_whitespace_and_blank_lines() {
        assert_eq!(normalize_output(b"5 \n"), normalize_output(b"5"));
        assert_eq!(
            normalize_output(b"a\r\nb\t\n\n\n"),
            normalize_output(b"a\nb")
        );
        assert_ne!(normalize_output(b"a\nb"), normalize_output(b"a\n b"));
    }

    #[test]
    fn speedup_clamps_and_rejects_failed_original() {
        let orig = Score::finite(10.0);
        assert_eq!(speedup(&orig, &Score::finite(2.0)).unwrap(), 5.0);
        assert_eq!(
            speedup(&Score::finite(2.0), &Score::finite(10.0)).unwrap(),
            1.0
        );
        assert_eq!(
            speedup(&orig, &Score::neg_infinity(FailReason::Timeout)).unwrap(),
            1.0
        );
        assert!(matches!(
            speedup(&Score::neg_infinity(FailReason::Timeout), &orig),
            Err(HarnessError::OriginalNotFinite)
        ));
    }

    #[test]
    fn compile_caches_by_content() {
        let dir = tempfile::tempdir().unwrap();
        let harness = harness(dir.path());
        let p = program(ECHO_SUM);
        let first = harness.compile(&p).unwrap();
        assert!(matches!(first, Compilation::Success(_)));
        assert_eq!(harness.compile_invocations(), 1);
        let second = harness.compile(&p).unwrap();
        assert!(matches!(second, Compilation::Success(_)));
        assert_eq!(harness.compile_invocations(), 1);
    }

    #[test]
    fn compile_failure_carries_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let harness = harness(dir.path());
        let p = program("int main( { this does not compile");
        match harness.compile(&p).unwrap() {
            Compilation::Failure { log } => assert!(!log.is_empty()),
            Compilation::Success(_) => panic!("expected failure"),
        }
    }

    #[test]
    fn evaluate_passes_correct_program() {
        let dir = tempfile::tempdir().unwrap();
        let harness = harness(dir.path());
        let report = harness.evaluate(&program(ECHO_SUM), &sum_suite(3)).unwrap();
        assert!(report.score.is_finite(), "score: {:?}", report.score);
        assert_eq!(report.per_case.len(), 3);
        assert!(report.per_case.iter().all(|c| c.status == CaseStatus::Pass));
    }

    #[test]
    fn evaluate_flags_wrong_answer_with_case_index() {
        let dir = tempfile::tempdir().unwrap();
        let harness = harness(dir.path());
        // Wrong only when a == 3.
        let wrong3 = r#"
#include <iostream>
int main() { long long a, b; std::cin >> a >> b; std::cout << (a == 3 ? 7 : a + b) << "\n"; return 0; }
"#;
        let report = harness.evaluate(&program(wrong3), &sum_suite(5)).unwrap();
        assert_eq!(
            report.score,
            Score::neg_infinity(FailReason::WrongAnswer { case_index: 3 })
        );
        assert_eq!(report.per_case.len(), 5, "no short-circuit by default");
    }

    #[test]
    fn evaluate_kills_infinite_loop() {
        let dir = tempfile::tempdir().unwrap();
        let harness = harness(dir.path()).with_timeout(Duration::from_millis(500));
        let looper = "int main() { for (;;) {} return 0; }";
        let report = harness.evaluate(&program(looper), &sum_suite(1)).unwrap();
        assert_eq!(report.score, Score::neg_infinity(FailReason::Timeout));
    }

    #[test]
    fn evaluate_reports_compile_error() {
        let dir = tempfile::tempdir().unwrap();
        let harness = harness(dir.path());
        let report = harness
            .evaluate(&program("int main( { nope"), &sum_suite(1))
            .unwrap();
        assert_eq!(report.score, Score::neg_infinity(FailReason::CompileError));
        assert!(report.per_case.is_empty());
        assert!(!report.compile_log.is_empty());
    }

    #[test]
    fn scripted_timing_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let hash = content_hash(ECHO_SUM.as_bytes());
        let mut times = BTreeMap::new();
        times.insert(hash, 0.25);
        let harness = harness(dir.path()).with_timing(TimingPolicy::Scripted { times });
        let report = harness.evaluate(&program(ECHO_SUM), &sum_suite(2)).unwrap();
        assert_eq!(report.score, Score::finite(0.25));
        assert!(report.per_case.iter().all(|c| c.time == 0.25));
    }

    #[test]
    fn suite_evaluator_caches_reports() {
        let dir = tempfile::tempdir().unwrap();
        let harness = harness(dir.path());
        let evaluator = SuiteEvaluator::new(&harness, sum_suite(2));
        let p = program(ECHO_SUM);
        let first = evaluator.evaluate(&p).unwrap();
        let second = evaluator.evaluate(&p).unwrap();
        assert_eq!(first, second);
        assert_eq!(harness.compile_invocations(), 1);
    }

    #[test]
    fn runtime_error_is_distinguished() {
        let dir = tempfile::tempdir().unwrap();
        let harness = harness(dir.path());
        let crasher = "#include <cstdlib>\nint main() { std::abort(); }";
        let report = harness.evaluate(&program(crasher), &sum_suite(2)).unwrap();
        assert_eq!(
            report.score,
            Score::neg_infinity(FailReason::RuntimeError { case_index: 1 })
        );
    }
}
