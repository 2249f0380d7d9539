//! Operator entry point: index building, atomic-dataset construction,
//! optimization runs, standalone evaluation, and reporting.
//!
//! Exit codes: 0 success, 1 run failure, 2 configuration error,
//! 3 environment error.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use rasopt::aegis::{self, AtomicBuildConfig, CompileValidator, EditValidator, SuiteValidator};
use rasopt::corpus::{self, PairFormat, Program, TestEntry};
use rasopt::harness::{CompileConfig, Harness, SuiteEvaluator, TimingPolicy};
use rasopt::llm::{CassetteWriter, Gateway, HttpBackend, HttpConfig, MockBackend, ReplayBackend};
use rasopt::manifest::{FileConfig, RunManifest};
use rasopt::metrics::{self, ReportFormat};
use rasopt::retrieval::{
    index_atomic_edits, index_pairs, CountingEmbedder, DiskCache, EmbedText, HashEmbedder,
    HttpEmbedder, Index, RecordingEmbedder, ReplayEmbedder, RetrievalMode,
};
use rasopt::search::{
    read_trace, write_trace, InstructVariant, Method, SearchConfig, SearchEngine, SearchError,
    SearchTrace,
};

const EXIT_RUN: i32 = 1;
const EXIT_CONFIG: i32 = 2;
const EXIT_ENV: i32 = 3;

struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
    fn run(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_RUN,
            message: message.into(),
        }
    }
    fn env(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_ENV,
            message: message.into(),
        }
    }
}

impl From<corpus::CorpusError> for CliError {
    fn from(e: corpus::CorpusError) -> Self {
        match &e {
            corpus::CorpusError::Io { .. } => CliError::env(e.to_string()),
            corpus::CorpusError::SuiteNotFound { .. } => CliError::config(e.to_string()),
            _ => CliError::run(e.to_string()),
        }
    }
}

impl From<rasopt::llm::LlmError> for CliError {
    fn from(e: rasopt::llm::LlmError) -> Self {
        use rasopt::llm::LlmError::*;
        match &e {
            Io { .. } => CliError::env(e.to_string()),
            Template { .. } => CliError::config(e.to_string()),
            _ => CliError::run(e.to_string()),
        }
    }
}

impl From<rasopt::retrieval::RetrievalError> for CliError {
    fn from(e: rasopt::retrieval::RetrievalError) -> Self {
        use rasopt::retrieval::RetrievalError::*;
        match &e {
            Io { .. } => CliError::env(e.to_string()),
            DimMismatch { .. } | InvalidK => CliError::config(e.to_string()),
            _ => CliError::run(e.to_string()),
        }
    }
}

impl From<rasopt::harness::HarnessError> for CliError {
    fn from(e: rasopt::harness::HarnessError) -> Self {
        use rasopt::harness::HarnessError::*;
        match &e {
            Environment(_) | Io { .. } => CliError::env(e.to_string()),
            _ => CliError::run(e.to_string()),
        }
    }
}

impl From<aegis::AegisError> for CliError {
    fn from(e: aegis::AegisError) -> Self {
        match &e {
            aegis::AegisError::Config(_) => CliError::config(e.to_string()),
            aegis::AegisError::Harness(_) | aegis::AegisError::Io { .. } => {
                CliError::env(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::env(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "rasopt",
    version,
    about = "Retrieval-guided beam search for LLM program optimization"
)]
struct Cli {
    /// Declarative TOML config; flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a retrieval index over a pair corpus or an atomic-edit dataset.
    BuildIndex(BuildIndexArgs),
    /// Decompose a pair corpus into the atomic-edit dataset.
    BuildAtomic(BuildAtomicArgs),
    /// Run an optimization method over one or more test programs.
    Optimize(Box<OptimizeArgs>),
    /// Compile and judge one program against its test suite.
    Evaluate(EvaluateArgs),
    /// Aggregate persisted traces into metric reports.
    Report(ReportArgs),
}

#[derive(Args, Clone, Default)]
struct BackendArgs {
    /// Completion backend: mock | replay | http.
    #[arg(long)]
    backend: Option<String>,
    /// Cassette file for the replay backend.
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Declarative rule script for the mock backend.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    /// Chat-completions base URL for the http backend.
    #[arg(long)]
    base_url: Option<String>,
    /// Model name for the http backend.
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key (default RASOPT_API_KEY).
    #[arg(long)]
    api_key_env: Option<String>,
    /// Record every live exchange to this cassette.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Mirror the gateway transcript to this file.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Cap on gateway calls that return content.
    #[arg(long)]
    max_calls: Option<u64>,
    /// Embedding backend: hash | replay | http.
    #[arg(long)]
    embed_backend: Option<String>,
    /// Dimension of the hash embedder (default 64).
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Embedding cassette: replay source, or recording target for http.
    #[arg(long)]
    embed_cassette: Option<PathBuf>,
    /// Embedding model name for the http backend.
    #[arg(long)]
    embed_model: Option<String>,
    /// Content-addressed cache root (descriptions, embeddings, binaries).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Disable the disk cache (reruns stop being free).
    #[arg(long)]
    no_cache: bool,
}

#[derive(Args)]
struct BuildIndexArgs {
    /// Pair corpus (line-delimited records).
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Atomic-edit dataset, for --kind atomic.
    #[arg(long)]
    atomic: Option<PathBuf>,
    /// Index payload kind: pairs | atomic.
    #[arg(long, default_value = "pairs")]
    kind: String,
    /// Retrieval mode: contextual | code.
    #[arg(long, default_value = "contextual")]
    mode: String,
    /// Keep only the top pairs per problem by recorded speedup.
    #[arg(long)]
    high_quality: bool,
    /// Cap per problem for --high-quality.
    #[arg(long, default_value_t = corpus::DEFAULT_MAX_PAIRS_PER_PROBLEM)]
    max_per_problem: usize,
    /// Output index file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct BuildAtomicArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// Output dataset file (line-delimited records, append-safe).
    #[arg(long)]
    out: PathBuf,
    /// Compile-check each intermediate program.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    validate_compile: bool,
    /// Run each intermediate program against its problem's test subset.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    validate_tests: bool,
    /// Test-suite root, required by --validate-tests.
    #[arg(long)]
    suites: Option<PathBuf>,
    #[arg(long, default_value_t = corpus::DEFAULT_SUBSET_SIZE)]
    subset_size: usize,
    #[arg(long, default_value_t = corpus::DEFAULT_SUBSET_SEED)]
    subset_seed: u64,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Method: ras | aegis | dynamic | no-contextual | instruct.
    #[arg(long)]
    method: String,
    /// Instruct-only prompt variant: epsr | ip.
    #[arg(long, default_value = "epsr")]
    variant: String,
    /// Single program source file (requires --problem-id).
    #[arg(long)]
    program: Option<PathBuf>,
    #[arg(long)]
    problem_id: Option<String>,
    /// Batch of test programs (line-delimited records).
    #[arg(long)]
    programs: Option<PathBuf>,
    /// Test-suite root directory.
    #[arg(long)]
    suites: PathBuf,
    /// Retrieval index (pair index, or atomic index for aegis).
    #[arg(long)]
    index: Option<PathBuf>,
    /// Output directory for traces, reports, and the manifest.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    samples_per_example: Option<usize>,
    /// Retrieval mode override: contextual | code.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    subset_size: Option<usize>,
    #[arg(long)]
    subset_seed: Option<u64>,
    /// Per-case timeout in seconds.
    #[arg(long)]
    timeout_secs: Option<f64>,
    /// Timing policy: wall | scripted.
    #[arg(long, default_value = "wall")]
    timing: String,
    /// Scripted timing map (JSON: source sha256 -> seconds).
    #[arg(long)]
    timing_file: Option<PathBuf>,
    /// Warmup runs per case (wall timing).
    #[arg(long)]
    warmup: Option<u32>,
    /// Measured runs per case (wall timing).
    #[arg(long)]
    runs: Option<u32>,
    /// Parallel program runs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Skip per-program evaluation audit records.
    #[arg(long)]
    no_audit: bool,
    /// Re-check the final program on the full suite after the search.
    #[arg(long)]
    final_validate: bool,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    program: PathBuf,
    #[arg(long)]
    problem_id: String,
    #[arg(long)]
    suites: PathBuf,
    /// Evaluate on the fixed subset instead of the full suite.
    #[arg(long)]
    subset_size: Option<usize>,
    #[arg(long, default_value_t = corpus::DEFAULT_SUBSET_SEED)]
    subset_seed: u64,
    #[arg(long)]
    timeout_secs: Option<f64>,
    #[arg(long, default_value = "wall")]
    timing: String,
    #[arg(long)]
    timing_file: Option<PathBuf>,
    #[arg(long)]
    warmup: Option<u32>,
    #[arg(long)]
    runs: Option<u32>,
    /// Write the full evaluation report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Trace files.
    #[arg(long, num_args = 1..)]
    traces: Vec<PathBuf>,
    /// Directory scanned for *.trace.json.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Output format: json | csv | markdown.
    #[arg(long, default_value = "json")]
    format: String,
    /// Emit the per-step series (csv).
    #[arg(long)]
    per_step: bool,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let file_config = match &cli.config {
        Some(path) => match FileConfig::load(path) {
            Ok(cfg) => cfg,
            Err(e) => {
                eprintln!("error: {e}");
                std::process::exit(EXIT_CONFIG);
            }
        },
        None => FileConfig::default(),
    };
    let result = match cli.command {
        Command::BuildIndex(args) => cmd_build_index(args, &file_config),
        Command::BuildAtomic(args) => cmd_build_atomic(args, &file_config),
        Command::Optimize(args) => cmd_optimize(*args, &file_config),
        Command::Evaluate(args) => cmd_evaluate(args, &file_config),
        Command::Report(args) => cmd_report(args),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}

// ---------------------------------------------------------------------------
// Backend wiring
// ---------------------------------------------------------------------------

struct Backends {
    gateway: Gateway,
    embedder: CountingEmbedder<Box<dyn EmbedText>>,
    cache: Option<DiskCache>,
    backend_name: String,
}

fn cache_root(args: &BackendArgs, file: &FileConfig, fallback: &Path) -> Option<PathBuf> {
    if args.no_cache {
        return None;
    }
    if let Ok(root) = std::env::var("RASOPT_CACHE_ROOT") {
        return Some(PathBuf::from(root));
    }
    Some(
        args.cache_dir
            .clone()
            .or_else(|| file.cache_dir.clone())
            .unwrap_or_else(|| fallback.join(".rasopt-cache")),
    )
}

fn build_backends(
    args: &BackendArgs,
    file: &FileConfig,
    default_dir: &Path,
) -> Result<Backends, CliError> {
    let kind = args
        .backend
        .clone()
        .or_else(|| file.backend.clone())
        .unwrap_or_else(|| "mock".into());
    let mut gateway = match kind.as_str() {
        "mock" => {
            let script = args
                .mock_script
                .clone()
                .or_else(|| file.mock_script.clone())
                .ok_or_else(|| CliError::config("--backend mock requires --mock-script"))?;
            Gateway::new(Box::new(MockBackend::from_script_file(&script)?))
        }
        "replay" => {
            let cassette = args
                .cassette
                .clone()
                .or_else(|| file.cassette.clone())
                .ok_or_else(|| CliError::config("--backend replay requires --cassette"))?;
            Gateway::new(Box::new(ReplayBackend::open(&cassette)?))
        }
        "http" => {
            let config = HttpConfig {
                base_url: args
                    .base_url
                    .clone()
                    .or_else(|| file.base_url.clone())
                    .ok_or_else(|| CliError::config("--backend http requires --base-url"))?,
                model: args
                    .model
                    .clone()
                    .or_else(|| file.model.clone())
                    .ok_or_else(|| CliError::config("--backend http requires --model"))?,
                api_key_env: args
                    .api_key_env
                    .clone()
                    .or_else(|| file.api_key_env.clone())
                    .unwrap_or_else(|| "RASOPT_API_KEY".into()),
                timeout_secs: 120,
                max_attempts: 3,
            };
            Gateway::new(Box::new(HttpBackend::new(config)?))
        }
        other => return Err(CliError::config(format!("unknown backend {other}"))),
    };
    let backend_name = gateway.backend_name();
    if let Some(record) = &args.record {
        gateway = gateway.with_recorder(CassetteWriter::create(record)?);
    }
    if let Some(path) = &args.transcript {
        gateway = gateway.with_transcript_file(path)?;
    }
    if let Some(max) = args.max_calls {
        gateway = gateway.with_max_calls(max);
    }

    let embed_kind = args
        .embed_backend
        .clone()
        .or_else(|| file.embed_backend.clone())
        .unwrap_or_else(|| "hash".into());
    let inner: Box<dyn EmbedText> = match embed_kind.as_str() {
        "hash" => {
            let dim = args.embed_dim.or(file.embed_dim).unwrap_or(64);
            Box::new(HashEmbedder::new(dim))
        }
        "replay" => {
            let cassette = args
                .embed_cassette
                .clone()
                .or_else(|| file.embed_cassette.clone())
                .ok_or_else(|| {
                    CliError::config("--embed-backend replay requires --embed-cassette")
                })?;
            Box::new(ReplayEmbedder::open(&cassette)?)
        }
        "http" => {
            let base_url = args
                .base_url
                .clone()
                .or_else(|| file.base_url.clone())
                .ok_or_else(|| CliError::config("--embed-backend http requires --base-url"))?;
            let model = args
                .embed_model
                .clone()
                .or_else(|| file.embed_model.clone())
                .ok_or_else(|| CliError::config("--embed-backend http requires --embed-model"))?;
            let key_env = args
                .api_key_env
                .clone()
                .or_else(|| file.api_key_env.clone())
                .unwrap_or_else(|| "RASOPT_API_KEY".into());
            let http = HttpEmbedder::new(&base_url, &model, &key_env)?;
            match &args.embed_cassette {
                Some(record_to) => Box::new(RecordingEmbedder::create(http, record_to)?),
                None => Box::new(http),
            }
        }
        other => {
            return Err(CliError::config(format!(
                "unknown embedding backend {other}"
            )))
        }
    };
    let cache = cache_root(args, file, default_dir).map(DiskCache::new);
    Ok(Backends {
        gateway,
        embedder: CountingEmbedder::new(inner),
        cache,
        backend_name,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_harness(
    cache_dir: Option<&Path>,
    workdir: &Path,
    file: &FileConfig,
    timing: &str,
    timing_file: Option<&Path>,
    timeout_secs: Option<f64>,
    warmup: Option<u32>,
    runs: Option<u32>,
) -> Result<Harness, CliError> {
    std::fs::create_dir_all(workdir)?;
    let bin_cache = cache_dir
        .map(|c| c.join("bin"))
        .unwrap_or_else(|| workdir.join("bin-cache"));
    let mut compile = CompileConfig::new(workdir, bin_cache);
    if let Some(compiler) = &file.compiler {
        compile.compiler = compiler.clone();
    }
    if let Some(flags) = &file.compile_flags {
        compile.flags = flags.clone();
    }
    let timing = match timing {
        "wall" => TimingPolicy::Wall {
            warmup: warmup.or(file.warmup).unwrap_or(1),
            runs: runs.or(file.runs).unwrap_or(3),
        },
        "scripted" => {
            let path = timing_file
                .ok_or_else(|| CliError::config("--timing scripted requires --timing-file"))?;
            TimingPolicy::scripted_from_file(path)?
        }
        other => return Err(CliError::config(format!("unknown timing policy {other}"))),
    };
    let timeout = timeout_secs
        .or(file.timeout_secs)
        .unwrap_or(rasopt::harness::DEFAULT_TIMEOUT_SECS);
    if timeout <= 0.0 {
        return Err(CliError::config("timeout must be positive"));
    }
    Ok(Harness::new(compile)
        .with_timing(timing)
        .with_timeout(Duration::from_secs_f64(timeout)))
}

fn sanitize(id: &str) -> String {
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

fn print_call_summary(backends: &Backends) {
    use rasopt::llm::PromptRole::*;
    let context = backends.gateway.calls_by_role(Context);
    let opt: usize = [
        OptimizePair,
        OptimizeMulti,
        InstructOnlyEpsr,
        InstructOnlyIp,
        OptimizeAtomic,
    ]
    .iter()
    .map(|r| backends.gateway.calls_by_role(*r))
    .sum();
    let dataset: usize = [Decompose, ApplyEdit, GeneralizeEdit]
        .iter()
        .map(|r| backends.gateway.calls_by_role(*r))
        .sum();
    println!(
        "gateway_calls: context={context} optimize={opt} dataset={dataset} embed_calls={}",
        backends.embedder.calls()
    );
}

// ---------------------------------------------------------------------------
// build-index
// ---------------------------------------------------------------------------

fn parse_mode(s: &str) -> Result<RetrievalMode, CliError> {
    match s {
        "contextual" => Ok(RetrievalMode::Contextual),
        "code" => Ok(RetrievalMode::Code),
        other => Err(CliError::config(format!("unknown retrieval mode {other}"))),
    }
}

fn cmd_build_index(args: BuildIndexArgs, file: &FileConfig) -> Result<(), CliError> {
    let out_parent = args
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_parent)?;
    let backends = build_backends(&args.backend, file, &out_parent)?;
    let mode = parse_mode(&args.mode)?;
    let mut manifest = RunManifest::new(
        "build-index",
        serde_json::json!({
            "kind": args.kind,
            "mode": mode.name(),
            "high_quality": args.high_quality,
            "max_per_problem": args.max_per_problem,
        }),
        backends.backend_name.clone(),
    );

    match args.kind.as_str() {
        "pairs" => {
            let pairs_path = args
                .pairs
                .as_ref()
                .ok_or_else(|| CliError::config("--kind pairs requires --pairs"))?;
            manifest.record_input("pairs", pairs_path)?;
            let loaded = corpus::load_pairs(pairs_path, PairFormat::Jsonl)?;
            if !loaded.rejects.is_empty() {
                let rejects_path = args.out.with_extension("rejects.jsonl");
                corpus::write_rejects(&rejects_path, &loaded.rejects)?;
                manifest.record_output(&rejects_path);
                eprintln!(
                    "warning: {} malformed records written to {}",
                    loaded.rejects.len(),
                    rejects_path.display()
                );
            }
            let pairs = if args.high_quality {
                let selection = corpus::select_high_quality(&loaded.pairs, args.max_per_problem);
                if selection.skipped_missing_speedup > 0 {
                    eprintln!(
                        "warning: {} pairs lack a recorded speedup and were excluded",
                        selection.skipped_missing_speedup
                    );
                }
                selection.pairs
            } else {
                loaded.pairs
            };
            println!("loaded {} pairs from {}", pairs.len(), pairs_path.display());
            let built = index_pairs(
                &pairs,
                mode,
                &backends.gateway,
                &backends.embedder,
                backends.cache.as_ref(),
            )?;
            built.index.save(&args.out)?;
            println!(
                "indexed {} entries (mode={}) -> {}",
                built.index.len(),
                mode.name(),
                args.out.display()
            );
        }
        "atomic" => {
            let atomic_path = args
                .atomic
                .as_ref()
                .ok_or_else(|| CliError::config("--kind atomic requires --atomic"))?;
            manifest.record_input("atomic", atomic_path)?;
            let edits = aegis::load_atomic_dataset(atomic_path)?;
            if edits.is_empty() {
                return Err(CliError::run("atomic dataset is empty"));
            }
            let index = index_atomic_edits(&edits, &backends.embedder, backends.cache.as_ref())?;
            index.save(&args.out)?;
            println!(
                "indexed {} atomic edits -> {}",
                index.len(),
                args.out.display()
            );
        }
        other => return Err(CliError::config(format!("unknown index kind {other}"))),
    }

    manifest.record_output(&args.out);
    manifest.finish();
    manifest.write(&args.out.with_extension("manifest.json"))?;
    print_call_summary(&backends);
    Ok(())
}

// ---------------------------------------------------------------------------
// build-atomic
// ---------------------------------------------------------------------------

fn cmd_build_atomic(args: BuildAtomicArgs, file: &FileConfig) -> Result<(), CliError> {
    let out_parent = args
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_parent)?;
    let backends = build_backends(&args.backend, file, &out_parent)?;
    let loaded = corpus::load_pairs(&args.pairs, PairFormat::Jsonl)?;

    let config = AtomicBuildConfig {
        validate_compile: args.validate_compile,
        validate_tests: args.validate_tests,
    };
    let cache = cache_root(&args.backend, file, &out_parent);
    let workdir = out_parent.join("work");
    let harness;
    let compile_validator;
    let suite_validator;
    let validator: Option<&dyn EditValidator> = if config.validate_tests {
        let suites = args
            .suites
            .as_ref()
            .ok_or_else(|| CliError::config("--validate-tests requires --suites"))?;
        harness = build_harness(
            cache.as_deref(),
            &workdir,
            file,
            "wall",
            None,
            None,
            None,
            None,
        )?;
        suite_validator = SuiteValidator::new(&harness, suites, args.subset_size, args.subset_seed);
        Some(&suite_validator)
    } else if config.validate_compile {
        harness = build_harness(
            cache.as_deref(),
            &workdir,
            file,
            "wall",
            None,
            None,
            None,
            None,
        )?;
        compile_validator = CompileValidator { harness: &harness };
        Some(&compile_validator)
    } else {
        None
    };

    let mut manifest = RunManifest::new(
        "build-atomic",
        serde_json::json!({
            "validate_compile": config.validate_compile,
            "validate_tests": config.validate_tests,
        }),
        backends.backend_name.clone(),
    );
    manifest.record_input("pairs", &args.pairs)?;

    let build = aegis::build_atomic_dataset(&loaded.pairs, &backends.gateway, validator, &config)?;
    let written = aegis::write_atomic_dataset(&args.out, &build.edits)?;
    let summary_path = args.out.with_extension("summary.json");
    std::fs::write(
        &summary_path,
        format!(
            "{}\n",
            serde_json::to_string_pretty(&build.summary).expect("summary serializes")
        ),
    )?;
    manifest.record_output(&args.out);
    manifest.record_output(&summary_path);
    manifest.finish();
    manifest.write(&args.out.with_extension("manifest.json"))?;

    println!(
        "pairs={} decomposed={} edits_emitted={} newly_written={}",
        build.summary.pairs_in,
        build.summary.pairs_decomposed,
        build.summary.edits_emitted,
        written
    );
    for (reason, count) in &build.summary.rejects {
        println!("reject[{reason}]={count}");
    }
    print_call_summary(&backends);

    if build.edits.is_empty() {
        return Err(CliError::run("no atomic edits survived the build"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// optimize
// ---------------------------------------------------------------------------

fn parse_method(s: &str) -> Result<Method, CliError> {
    match s {
        "ras" => Ok(Method::Ras),
        "aegis" => Ok(Method::Aegis),
        "dynamic" | "dynamic-retrieval" => Ok(Method::DynamicRetrieval),
        "no-contextual" => Ok(Method::NoContextual),
        "instruct" | "instruct-only" => Ok(Method::InstructOnly),
        other => Err(CliError::config(format!("unknown method {other}"))),
    }
}

enum LoadedIndex {
    None,
    Pairs(Index<rasopt::corpus::ProgramPair>),
    Atomic(Index<rasopt::aegis::AtomicEdit>),
}

fn resolve_config(args: &OptimizeArgs, file: &FileConfig) -> Result<SearchConfig, CliError> {
    let method = parse_method(&args.method)?;
    let mut config = SearchConfig::for_method(method);
    if let Some(k) = args.k.or(file.k) {
        config.k = k;
    }
    if let Some(m) = args.m.or(file.m) {
        config.m = m;
    }
    if let Some(h) = args.h.or(file.h) {
        config.h = h;
    }
    if let Some(s) = args.samples_per_example.or(file.samples_per_example) {
        config.samples_per_example = s;
    }
    if let Some(mode) = &args.mode {
        config.mode = parse_mode(mode)?;
    }
    if let Some(n) = args.subset_size.or(file.subset_size) {
        config.subset_size = n;
    }
    if let Some(seed) = args.subset_seed.or(file.subset_seed) {
        config.subset_seed = seed;
    }
    config.variant = match args.variant.as_str() {
        "epsr" => InstructVariant::Epsr,
        "ip" => InstructVariant::Ip,
        other => {
            return Err(CliError::config(format!(
                "unknown instruct variant {other}"
            )))
        }
    };
    if config.k == 0 && method != Method::InstructOnly {
        return Err(CliError::config("k must be at least 1"));
    }
    if config.m == 0 || config.h == 0 {
        return Err(CliError::config("m and h must be at least 1"));
    }
    if config.subset_size == 0 {
        return Err(CliError::config("subset size must be at least 1"));
    }
    Ok(config)
}

fn load_entries(args: &OptimizeArgs) -> Result<Vec<TestEntry>, CliError> {
    match (&args.program, &args.programs) {
        (Some(path), None) => {
            let problem_id = args
                .problem_id
                .clone()
                .ok_or_else(|| CliError::config("--program requires --problem-id"))?;
            let source = std::fs::read_to_string(path)?;
            if source.trim().is_empty() {
                return Err(CliError::run(format!("{} is empty", path.display())));
            }
            let program_id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "program".into());
            Ok(vec![TestEntry {
                program: Program {
                    source,
                    problem_id,
                    program_id,
                    origin: rasopt::corpus::Origin::Corpus,
                },
                human_fast: None,
            }])
        }
        (None, Some(path)) => {
            let (entries, rejects) = corpus::load_test_entries(path)?;
            if !rejects.is_empty() {
                eprintln!("warning: {} malformed test records skipped", rejects.len());
            }
            Ok(entries)
        }
        _ => Err(CliError::config(
            "provide exactly one of --program (with --problem-id) or --programs",
        )),
    }
}

fn cmd_optimize(args: OptimizeArgs, file: &FileConfig) -> Result<(), CliError> {
    let method = parse_method(&args.method)?;
    let config = resolve_config(&args, file)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let backends = build_backends(&args.backend, file, &args.out_dir)?;

    // The method's artifacts are checked before any gateway call.
    let index = match method {
        Method::InstructOnly => LoadedIndex::None,
        Method::Aegis => {
            let path = args
                .index
                .as_ref()
                .ok_or_else(|| CliError::config("--method aegis requires an atomic --index"))?;
            LoadedIndex::Atomic(Index::load(path).map_err(|e| CliError::config(e.to_string()))?)
        }
        _ => {
            let path = args.index.as_ref().ok_or_else(|| {
                CliError::config(format!("--method {} requires --index", args.method))
            })?;
            LoadedIndex::Pairs(Index::load(path).map_err(|e| CliError::config(e.to_string()))?)
        }
    };

    let entries = load_entries(&args)?;
    let cache = cache_root(&args.backend, file, &args.out_dir);
    let workdir = args.out_dir.join("work");
    let harness = build_harness(
        cache.as_deref(),
        &workdir,
        file,
        &args.timing,
        args.timing_file.as_deref(),
        args.timeout_secs,
        args.warmup,
        args.runs,
    )?;

    let mut manifest = RunManifest::new(
        "optimize",
        serde_json::to_value(&config).expect("config serializes"),
        backends.backend_name.clone(),
    );
    if let Some(path) = &args.index {
        manifest.record_input("index", path)?;
    }
    if let Some(path) = &args.backend.cassette {
        manifest.record_input("cassette", path)?;
    }
    if let Some(path) = &args.programs {
        manifest.record_input("programs", path)?;
    }

    let traces_dir = args.out_dir.join("traces");
    std::fs::create_dir_all(&traces_dir)?;

    let run_one = |entry: &TestEntry| -> Result<SearchTrace, CliError> {
        let suite = corpus::load_test_suite(&args.suites, &entry.program.problem_id)?;
        let subset = corpus::fixed_subset(&suite, config.subset_size, config.subset_seed);
        let evaluator = {
            let base = SuiteEvaluator::new(&harness, subset);
            if args.no_audit {
                base
            } else {
                base.with_audit_dir(args.out_dir.join("evals"))
            }
        };
        let engine = SearchEngine {
            gateway: &backends.gateway,
            evaluator: &evaluator,
            embedder: &backends.embedder,
            describe_cache: backends.cache.as_ref(),
        };
        let outcome = match (&index, method) {
            (LoadedIndex::None, Method::InstructOnly) => {
                engine.instruct_only(&entry.program, &config)
            }
            (LoadedIndex::Pairs(index), Method::Ras) => {
                engine.ras_optimize(&entry.program, index, &config)
            }
            (LoadedIndex::Pairs(index), Method::DynamicRetrieval) => {
                engine.dynamic_retrieval(&entry.program, index, &config)
            }
            (LoadedIndex::Pairs(index), Method::NoContextual) => {
                engine.no_contextual(&entry.program, index, &config)
            }
            (LoadedIndex::Atomic(index), Method::Aegis) => {
                engine.aegis_optimize(&entry.program, index, &config)
            }
            _ => return Err(CliError::config("index kind does not match the method")),
        };
        match outcome {
            Ok(trace) => Ok(trace),
            Err(SearchError::Environment { source, partial }) => {
                if let Some(partial) = partial {
                    let path = traces_dir.join(format!(
                        "{}.partial.json",
                        sanitize(&entry.program.program_id)
                    ));
                    let _ = write_trace(&path, &partial);
                }
                Err(CliError::env(source.to_string()))
            }
            Err(SearchError::Config(msg)) => Err(CliError::config(msg)),
            Err(SearchError::Retrieval(e)) => Err(e.into()),
        }
    };

    let jobs = args.jobs.or(file.jobs).unwrap_or(1).max(1);
    let mut traces: Vec<SearchTrace> = Vec::with_capacity(entries.len());
    if jobs <= 1 {
        for entry in &entries {
            traces.push(run_one(entry)?);
        }
    } else {
        let run_one = &run_one;
        let chunk_size = entries.len().div_ceil(jobs).max(1);
        let results: Vec<Result<SearchTrace, CliError>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in entries.chunks(chunk_size) {
                handles.push(scope.spawn(move || chunk.iter().map(run_one).collect::<Vec<_>>()));
            }
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        for result in results {
            traces.push(result?);
        }
    }

    for trace in &traces {
        let path = traces_dir.join(format!("{}.trace.json", sanitize(&trace.p0.program_id)));
        write_trace(&path, trace)?;
        manifest.record_output(&path);
        let speedup = rasopt::harness::speedup(&trace.p0_score, &trace.final_score).unwrap_or(1.0);
        println!(
            "program {}: speedup {:.4}{}{}",
            trace.p0.program_id,
            speedup,
            if speedup >= metrics::OPTIMIZED_THRESHOLD {
                " (optimized)"
            } else {
                ""
            },
            trace
                .diagnostic
                .as_ref()
                .map(|d| format!(" [{d}]"))
                .unwrap_or_default()
        );
    }

    if args.final_validate {
        for trace in &traces {
            if trace.final_program.source != trace.p0.source {
                let suite = corpus::load_test_suite(&args.suites, &trace.p0.problem_id)?;
                let report = harness.evaluate(&trace.final_program, &suite)?;
                if !report.score.is_finite() {
                    eprintln!(
                        "warning: final program for {} fails the full suite",
                        trace.p0.program_id
                    );
                }
            }
        }
    }

    let results = metrics::run_results(&traces, metrics::OPTIMIZED_THRESHOLD);
    let report_json = metrics::emit_report(
        &results,
        &traces,
        metrics::OPTIMIZED_THRESHOLD,
        ReportFormat::Json,
    )
    .map_err(|e| CliError::run(e.to_string()))?;
    let report_path = args.out_dir.join("report.json");
    std::fs::write(&report_path, report_json)?;
    manifest.record_output(&report_path);

    manifest.finish();
    manifest.write(&args.out_dir.join("manifest.json"))?;
    print_call_summary(&backends);
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn cmd_evaluate(args: EvaluateArgs, file: &FileConfig) -> Result<(), CliError> {
    let source = std::fs::read_to_string(&args.program)?;
    let program = Program {
        source,
        problem_id: args.problem_id.clone(),
        program_id: args
            .program
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "program".into()),
        origin: rasopt::corpus::Origin::Corpus,
    };
    let suite = corpus::load_test_suite(&args.suites, &args.problem_id)?;
    let suite = match args.subset_size {
        Some(n) => corpus::fixed_subset(&suite, n, args.subset_seed),
        None => suite,
    };
    let workdir = std::env::temp_dir().join("rasopt-evaluate");
    let harness = build_harness(
        args.cache_dir.as_deref(),
        &workdir,
        file,
        &args.timing,
        args.timing_file.as_deref(),
        args.timeout_secs,
        args.warmup,
        args.runs,
    )?;
    let report = harness.evaluate(&program, &suite)?;
    match &report.score {
        rasopt::harness::Score::Finite { seconds } => {
            println!(
                "score: finite {seconds:.6}s over {} cases",
                report.per_case.len()
            )
        }
        rasopt::harness::Score::NegInfinity { reason } => {
            println!(
                "score: -inf ({})",
                serde_json::to_string(reason).unwrap_or_default()
            )
        }
    }
    for case in &report.per_case {
        println!(
            "  case {}: {} ({:.6}s)",
            case.case_index,
            serde_json::to_string(&case.status)
                .unwrap_or_default()
                .trim_matches('"'),
            case.time
        );
    }
    if let Some(out) = &args.out {
        std::fs::write(
            out,
            format!(
                "{}\n",
                serde_json::to_string_pretty(&report).expect("report serializes")
            ),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let mut paths: Vec<PathBuf> = args.traces.clone();
    if let Some(dir) = &args.trace_dir {
        let mut found: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.file_name()
                    .is_some_and(|n| n.to_string_lossy().ends_with(".trace.json"))
            })
            .collect();
        found.sort();
        paths.extend(found);
    }
    if paths.is_empty() {
        return Err(CliError::config("no trace files given"));
    }
    let mut traces = Vec::with_capacity(paths.len());
    for path in &paths {
        traces
            .push(read_trace(path).map_err(|e| CliError::run(format!("{}: {e}", path.display())))?);
    }
    let threshold = args.threshold.unwrap_or(metrics::OPTIMIZED_THRESHOLD);
    let format = if args.per_step {
        ReportFormat::Csv
    } else {
        args.format
            .parse::<ReportFormat>()
            .map_err(CliError::config)?
    };
    let results = metrics::run_results(&traces, threshold);
    let document = metrics::emit_report(&results, &traces, threshold, format)
        .map_err(|e| CliError::run(e.to_string()))?;
    match &args.out {
        Some(path) => std::fs::write(path, document)?,
        None => print!("{document}"),
    }
    Ok(())
}
