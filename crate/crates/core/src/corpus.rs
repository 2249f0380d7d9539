//! Slow-fast program pair corpora and per-problem test suites.
//!
//! The on-disk pair format is UTF-8 line-delimited JSON records with fields
//! `{problem_id, slow_code, fast_code, speedup?, slow_id?, fast_id?}`. Test
//! suites live in a directory per problem: `<root>/<problem_id>/input.<i>.txt`
//! paired with `expected_output.<i>.txt`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

/// Cap on pairs kept per problem by [`select_high_quality`].
pub const DEFAULT_MAX_PAIRS_PER_PROBLEM: usize = 4;
/// Number of test cases in the fixed evaluation subset.
pub const DEFAULT_SUBSET_SIZE: usize = 5;
/// Seed for drawing the fixed evaluation subset.
pub const DEFAULT_SUBSET_SEED: u64 = 7;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no valid records in {path}")]
    EmptyCorpus { path: PathBuf },
    #[error("no test suite for problem {problem_id} under {root}")]
    SuiteNotFound { problem_id: String, root: PathBuf },
    #[error("malformed test suite for problem {problem_id}: {reason}")]
    MalformedSuite { problem_id: String, reason: String },
}

/// Where a program text came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Corpus,
    Generated,
}

/// A candidate source text plus identity metadata; the unit being optimized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub source: String,
    pub problem_id: String,
    pub program_id: String,
    pub origin: Origin,
}

/// A (slow, fast) training example; the unit of retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramPair {
    pub slow: Program,
    pub fast: Program,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recorded_speedup: Option<f64>,
}

impl ProgramPair {
    /// Stable identity of a pair within a corpus, used as its retrieval key.
    pub fn key(&self) -> String {
        format!("{}::{}", self.slow.program_id, self.fast.program_id)
    }
}

/// One judged input/expected-output pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: Vec<u8>,
    pub expected_output: Vec<u8>,
}

/// Ordered, non-empty list of test cases for one problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSuite {
    pub problem_id: String,
    pub cases: Vec<TestCase>,
}

/// A record skipped while loading, with its line number and the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line_number: usize,
    pub reason: String,
}

/// Result of loading a pair corpus: the valid pairs plus a rejects report.
#[derive(Debug, Clone)]
pub struct LoadedPairs {
    pub pairs: Vec<ProgramPair>,
    pub rejects: Vec<Reject>,
}

/// Supported pair corpus encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairFormat {
    Jsonl,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    problem_id: String,
    slow_code: String,
    fast_code: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    speedup: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slow_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fast_id: Option<String>,
}

fn validate_record(rec: &PairRecord, line: usize) -> Result<(), String> {
    if rec.problem_id.trim().is_empty() {
        return Err("empty problem_id".into());
    }
    if rec.slow_code.trim().is_empty() {
        return Err("empty slow_code".into());
    }
    if rec.fast_code.trim().is_empty() {
        return Err("empty fast_code".into());
    }
    if let Some(s) = rec.speedup {
        if !s.is_finite() {
            return Err("speedup is not finite".into());
        }
        if s < 1.1 {
            return Err(format!("speedup {s} below the 1.1 corpus floor"));
        }
    }
    let _ = line;
    Ok(())
}

/// Loads all well-formed pairs in file order; malformed records are collected
/// into the rejects report rather than silently dropped.
pub fn load_pairs(path: &Path, format: PairFormat) -> Result<LoadedPairs, CorpusError> {
    let PairFormat::Jsonl = format;
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut pairs = Vec::new();
    let mut rejects = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_number = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = match serde_json::from_str(&line) {
            Ok(rec) => rec,
            Err(e) => {
                rejects.push(Reject {
                    line_number,
                    reason: format!("invalid record: {e}"),
                });
                continue;
            }
        };
        if let Err(reason) = validate_record(&rec, line_number) {
            rejects.push(Reject {
                line_number,
                reason,
            });
            continue;
        }
        let slow_id = rec
            .slow_id
            .unwrap_or_else(|| format!("{}/L{line_number}/slow", rec.problem_id));
        let fast_id = rec
            .fast_id
            .unwrap_or_else(|| format!("{}/L{line_number}/fast", rec.problem_id));
        if !seen_ids.insert(slow_id.clone()) {
            rejects.push(Reject {
                line_number,
                reason: format!("duplicate program_id {slow_id}"),
            });
            continue;
        }
        if !seen_ids.insert(fast_id.clone()) {
            seen_ids.remove(&slow_id);
            rejects.push(Reject {
                line_number,
                reason: format!("duplicate program_id {fast_id}"),
            });
            continue;
        }
        pairs.push(ProgramPair {
            slow: Program {
                source: rec.slow_code,
                problem_id: rec.problem_id.clone(),
                program_id: slow_id,
                origin: Origin::Corpus,
            },
            fast: Program {
                source: rec.fast_code,
                problem_id: rec.problem_id,
                program_id: fast_id,
                origin: Origin::Corpus,
            },
            recorded_speedup: rec.speedup,
        });
    }

    if pairs.is_empty() {
        return Err(CorpusError::EmptyCorpus {
            path: path.to_path_buf(),
        });
    }
    Ok(LoadedPairs { pairs, rejects })
}

/// Writes pairs as line-delimited records with explicit program ids, so a
/// reload preserves every field.
pub fn write_pairs(path: &Path, pairs: &[ProgramPair]) -> Result<(), CorpusError> {
    let mut out = fs::File::create(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    for pair in pairs {
        let rec = PairRecord {
            problem_id: pair.slow.problem_id.clone(),
            slow_code: pair.slow.source.clone(),
            fast_code: pair.fast.source.clone(),
            speedup: pair.recorded_speedup,
            slow_id: Some(pair.slow.program_id.clone()),
            fast_id: Some(pair.fast.program_id.clone()),
        };
        let line = serde_json::to_string(&rec).expect("pair record serializes");
        writeln!(out, "{line}").map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    Ok(())
}

/// Writes the rejects report as line-delimited `{line_number, reason}` records.
pub fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<(), CorpusError> {
    let mut out = fs::File::create(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    for reject in rejects {
        let line = serde_json::to_string(reject).expect("reject serializes");
        writeln!(out, "{line}").map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    Ok(())
}

/// High-quality selection output; pairs lacking a recorded speedup are counted
/// rather than silently dropped.
#[derive(Debug, Clone)]
pub struct HighQualitySelection {
    pub pairs: Vec<ProgramPair>,
    pub skipped_missing_speedup: usize,
}

/// Keeps, per problem, at most `max_per_problem` pairs with the highest
/// recorded speedup. Ties break by (slow id, fast id) lexicographic order so
/// the selection is deterministic.
pub fn select_high_quality(pairs: &[ProgramPair], max_per_problem: usize) -> HighQualitySelection {
    assert!(max_per_problem >= 1, "max_per_problem must be positive");
    let mut by_problem: BTreeMap<&str, Vec<&ProgramPair>> = BTreeMap::new();
    let mut skipped = 0usize;
    for pair in pairs {
        if pair.recorded_speedup.is_none() {
            skipped += 1;
            continue;
        }
        by_problem
            .entry(pair.slow.problem_id.as_str())
            .or_default()
            .push(pair);
    }
    let mut selected = Vec::new();
    for (_, mut group) in by_problem {
        group.sort_by(|a, b| {
            let sa = a.recorded_speedup.expect("filtered above");
            let sb = b.recorded_speedup.expect("filtered above");
            sb.total_cmp(&sa)
                .then_with(|| a.slow.program_id.cmp(&b.slow.program_id))
                .then_with(|| a.fast.program_id.cmp(&b.fast.program_id))
        });
        group.truncate(max_per_problem);
        selected.extend(group.into_iter().cloned());
    }
    HighQualitySelection {
        pairs: selected,
        skipped_missing_speedup: skipped,
    }
}

fn case_index_of(name: &str, prefix: &str) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?.strip_suffix(".txt")?;
    rest.parse().ok()
}

/// Loads the ordered test suite for one problem from
/// `<root>/<problem_id>/input.<i>.txt` + `expected_output.<i>.txt`.
pub fn load_test_suite(root: &Path, problem_id: &str) -> Result<TestSuite, CorpusError> {
    let dir = root.join(problem_id);
    if !dir.is_dir() {
        return Err(CorpusError::SuiteNotFound {
            problem_id: problem_id.to_string(),
            root: root.to_path_buf(),
        });
    }
    let mut indices = Vec::new();
    let entries = fs::read_dir(&dir).map_err(|source| CorpusError::Io {
        path: dir.clone(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| CorpusError::Io {
            path: dir.clone(),
            source,
        })?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(i) = case_index_of(name, "input.") {
            indices.push(i);
        }
    }
    indices.sort_unstable();
    indices.dedup();
    if indices.is_empty() {
        return Err(CorpusError::MalformedSuite {
            problem_id: problem_id.to_string(),
            reason: "no input.<i>.txt files".into(),
        });
    }
    let mut cases = Vec::with_capacity(indices.len());
    for i in indices {
        let input_path = dir.join(format!("input.{i}.txt"));
        let expected_path = dir.join(format!("expected_output.{i}.txt"));
        let input = fs::read(&input_path).map_err(|source| CorpusError::Io {
            path: input_path,
            source,
        })?;
        if !expected_path.is_file() {
            return Err(CorpusError::MalformedSuite {
                problem_id: problem_id.to_string(),
                reason: format!("input.{i}.txt has no expected_output.{i}.txt"),
            });
        }
        let expected_output = fs::read(&expected_path).map_err(|source| CorpusError::Io {
            path: expected_path,
            source,
        })?;
        cases.push(TestCase {
            input,
            expected_output,
        });
    }
    Ok(TestSuite {
        problem_id: problem_id.to_string(),
        cases,
    })
}

/// Draws `n` cases without replacement using a seeded generator; the same
/// (suite, n, seed) always yields the same subset, returned in suite order.
/// A suite no larger than `n` is returned unchanged.
pub fn fixed_subset(suite: &TestSuite, n: usize, seed: u64) -> TestSuite {
    assert!(n >= 1, "subset size must be positive");
    if n >= suite.cases.len() {
        return suite.clone();
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, suite.cases.len(), n).into_vec();
    picked.sort_unstable();
    TestSuite {
        problem_id: suite.problem_id.clone(),
        cases: picked.into_iter().map(|i| suite.cases[i].clone()).collect(),
    }
}

/// A test-set entry: the program to optimize plus, when the corpus provides
/// it, the human-written fast counterpart used for the human-speedup metric.
#[derive(Debug, Clone)]
pub struct TestEntry {
    pub program: Program,
    pub human_fast: Option<Program>,
}

#[derive(Debug, Deserialize)]
struct TestRecord {
    problem_id: String,
    #[serde(alias = "slow_code")]
    code: String,
    #[serde(default)]
    fast_code: Option<String>,
    #[serde(default)]
    slow_id: Option<String>,
    #[serde(default)]
    fast_id: Option<String>,
}

/// Loads test programs (records `{problem_id, code|slow_code, fast_code?}`)
/// for optimization runs.
pub fn load_test_entries(path: &Path) -> Result<(Vec<TestEntry>, Vec<Reject>), CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut entries = Vec::new();
    let mut rejects = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_number = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TestRecord = match serde_json::from_str(&line) {
            Ok(rec) => rec,
            Err(e) => {
                rejects.push(Reject {
                    line_number,
                    reason: format!("invalid record: {e}"),
                });
                continue;
            }
        };
        if rec.problem_id.trim().is_empty() || rec.code.trim().is_empty() {
            rejects.push(Reject {
                line_number,
                reason: "empty problem_id or code".into(),
            });
            continue;
        }
        let program = Program {
            source: rec.code,
            problem_id: rec.problem_id.clone(),
            program_id: rec
                .slow_id
                .unwrap_or_else(|| format!("{}/T{line_number}", rec.problem_id)),
            origin: Origin::Corpus,
        };
        let human_fast = rec
            .fast_code
            .filter(|c| !c.trim().is_empty())
            .map(|code| Program {
                source: code,
                problem_id: rec.problem_id.clone(),
                program_id: rec
                    .fast_id
                    .unwrap_or_else(|| format!("{}/T{line_number}/fast", rec.problem_id)),
                origin: Origin::Corpus,
            });
        entries.push(TestEntry {
            program,
            human_fast,
        });
    }
    if entries.is_empty() {
        return Err(CorpusError::EmptyCorpus {
            path: path.to_path_buf(),
        });
    }
    Ok((entries, rejects))
}
