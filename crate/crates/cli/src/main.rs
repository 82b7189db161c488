//! `bioqa` command-line entry point.

mod config;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bioqa::analysis::{AnalyzerConfig, Stemmer};
use bioqa::corpus::{load_feedback, load_questions, open_corpus, DocumentLookup, Question};
use bioqa::eval::{evaluate_run, render_report};
use bioqa::fewshot::{sample_training_sets, select_query_examples, ExampleStore, QueryCandidate, SampleConfig};
use bioqa::index::{build_index_from_stream, search_all, InvertedIndex};
use bioqa::llm::http::{HttpConfig, HttpProvider, RetryPolicy};
use bioqa::llm::{ChatProvider, Fixtures, MockProvider, RecordingProvider};
use bioqa::pipeline::trace::write_traces;
use bioqa::pipeline::{self, Phase, PipelineError, Resources};
use bioqa::prompts::Prompts;
use bioqa::query::{parse_query_envelope, parse_query_string, DefaultOperator, FieldSpec};
use bioqa::runfile::{load_run_file, validate_run_file, write_run_file};
use bioqa::wiki::{FixtureKb, KnowledgeBase, MediaWikiKb};
use bioqa::Report;

use config::Settings;

/// Bad invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(
    name = "bioqa",
    version,
    about = "Biomedical question answering: BM25 search, LLM pipeline and challenge scoring",
    after_help = config::help_table()
)]
struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or inspect a persisted index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Run an ad-hoc query against one or more indices.
    Search(SearchArgs),
    /// Sample the six few-shot training sets from gold training questions.
    SampleExamples(SampleArgs),
    /// Rank generated queries by document F1 and keep the best as examples.
    SelectQueryExamples(SelectArgs),
    /// Answer a question file and write a run file plus traces.
    #[command(after_help = config::help_table())]
    Run(RunArgs),
    /// Score a run file against gold questions.
    Eval(EvalArgs),
    /// Check a run file against the submission rules.
    Validate(ValidateArgs),
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Index a line-delimited JSON corpus.
    Build {
        /// Corpus file, one JSON document per line.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// porter | none
        #[arg(long, default_value = "porter")]
        stemmer: String,
        /// Replace the built-in English stopword list.
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// Print document and term statistics as JSON.
    Stats { index: PathBuf },
}

#[derive(Args)]
struct QueryOpts {
    /// Fields with optional boosts.
    #[arg(long, default_value = "title^10,abstract")]
    fields: String,
    /// and | or
    #[arg(long, default_value = "and")]
    operator: String,
}

impl QueryOpts {
    fn resolve(&self) -> Result<(Vec<FieldSpec>, DefaultOperator)> {
        let fields = FieldSpec::parse_list(&self.fields).map_err(|e| usage(format!("--fields: {e}")))?;
        let op = DefaultOperator::parse(&self.operator)
            .ok_or_else(|| usage(format!("--operator must be and or or, got `{}`", self.operator)))?;
        Ok((fields, op))
    }
}

#[derive(Args)]
struct SearchArgs {
    /// Index file; repeat to search several together.
    #[arg(long, required = true)]
    index: Vec<PathBuf>,
    #[command(flatten)]
    query_opts: QueryOpts,
    #[arg(long, default_value_t = 10)]
    size: usize,
    /// Query string, or a full JSON query envelope.
    query: String,
}

#[derive(Args)]
struct SampleArgs {
    /// Gold training questions.
    #[arg(long)]
    questions: PathBuf,
    /// Index holding the training documents; repeatable.
    #[arg(long, required = true)]
    index: Vec<PathBuf>,
    /// Directory receiving one <kind>.jsonl per sub-problem.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = bioqa::fewshot::DEFAULT_SAMPLE_SIZE)]
    per_set: usize,
    /// Shuffle eligible questions before sampling.
    #[arg(long)]
    shuffle: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    templates_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    /// Gold questions the candidates were generated for.
    #[arg(long)]
    questions: PathBuf,
    /// JSON lines of {"id": ..., "query": ...}.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, required = true)]
    index: Vec<PathBuf>,
    /// Examples directory; query_generation.jsonl is written there.
    #[arg(long)]
    output: PathBuf,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 50)]
    size: usize,
    #[command(flatten)]
    query_opts: QueryOpts,
    #[arg(long)]
    templates_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    phase: Option<String>,
    #[arg(long)]
    questions: Option<PathBuf>,
    /// Index file; repeatable.
    #[arg(long)]
    index: Vec<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    traces: Option<PathBuf>,
    /// mock | http
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Record every completion of this run into a fixture file.
    #[arg(long)]
    record_fixtures: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// N for every stage, or stage=N pairs (query, snippet, rerank, answer).
    #[arg(long)]
    shots: Option<String>,
    /// Enable encyclopedia background context.
    #[arg(long)]
    wiki: bool,
    #[arg(long)]
    kb_dir: Option<PathBuf>,
    #[arg(long)]
    examples_dir: Option<PathBuf>,
    #[arg(long)]
    templates_dir: Option<PathBuf>,
    /// Prior run whose snippets feed phase_a_plus.
    #[arg(long)]
    snippet_source: Option<PathBuf>,
    #[arg(long)]
    feedback: Option<PathBuf>,
    /// Any config key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    run: PathBuf,
    gold: PathBuf,
    /// Index used to check snippet offsets; repeatable.
    #[arg(long)]
    index: Vec<PathBuf>,
    /// Print the report as JSON instead of tables.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ValidateArgs {
    run: PathBuf,
    /// Questions the run must answer.
    #[arg(long)]
    questions: Option<PathBuf>,
    /// Index used to check snippet offsets; repeatable.
    #[arg(long)]
    index: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Index(IndexCommand::Build {
            corpus,
            output,
            stemmer,
            stopwords,
        }) => index_build(&corpus, &output, &stemmer, stopwords.as_deref()),
        Command::Index(IndexCommand::Stats { index }) => {
            let index = InvertedIndex::load_unchecked(&index)?;
            println!("{}", serde_json::to_string_pretty(&index.stats())?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Search(args) => search(&args),
        Command::SampleExamples(args) => sample_examples(&args),
        Command::SelectQueryExamples(args) => select_examples(&args),
        Command::Run(args) => run(&args),
        Command::Eval(args) => eval(&args),
        Command::Validate(args) => validate(&args),
    }
}

fn index_build(corpus: &Path, output: &Path, stemmer: &str, stopwords: Option<&Path>) -> Result<ExitCode> {
    let stemmer = Stemmer::parse(stemmer).ok_or_else(|| usage(format!("unknown stemmer `{stemmer}`")))?;
    let mut analyzer = AnalyzerConfig::english().with_stemmer(stemmer);
    if let Some(path) = stopwords {
        analyzer = analyzer
            .with_stopwords_file(path)
            .with_context(|| format!("reading {}", path.display()))?;
    }
    let index = build_index_from_stream(open_corpus(corpus)?, analyzer)?;
    index.persist(output)?;
    eprintln!("indexed {} documents into {}", index.doc_count(), output.display());
    Ok(ExitCode::SUCCESS)
}

/// Loads indices that must share one analyzer.
fn load_indices(paths: &[PathBuf]) -> Result<Vec<InvertedIndex>> {
    let mut out: Vec<InvertedIndex> = Vec::new();
    for path in paths {
        let index = match out.first() {
            None => InvertedIndex::load_unchecked(path),
            Some(first) => InvertedIndex::load(path, first.analyzer()),
        }
        .with_context(|| format!("loading index {}", path.display()))?;
        out.push(index);
    }
    Ok(out)
}

fn search(args: &SearchArgs) -> Result<ExitCode> {
    let indices = load_indices(&args.index)?;
    let refs: Vec<&InvertedIndex> = indices.iter().collect();
    let (mut fields, op) = args.query_opts.resolve()?;
    let mut size = args.size;
    let ast = if args.query.trim_start().starts_with('{') {
        let envelope = parse_query_envelope(&args.query).map_err(|e| usage(format!("query envelope: {e}")))?;
        fields = envelope.fields;
        size = envelope.size;
        envelope.ast
    } else {
        parse_query_string(&args.query, op).map_err(|e| usage(format!("query: {e}")))?
    };
    if size == 0 {
        return Err(usage("size must be at least 1"));
    }
    let hits = search_all(&refs, &ast, &fields, size)?;
    for (rank, hit) in hits.iter().enumerate() {
        let title = refs.as_slice().document(&hit.doc_id).map_or("", |d| d.title.as_str());
        println!("{}\t{}\t{:.6}\t{}", rank + 1, hit.doc_id, hit.score, title);
    }
    Ok(ExitCode::SUCCESS)
}

fn prompts_from(dir: Option<&Path>) -> Result<Prompts> {
    Ok(match dir {
        Some(d) => Prompts::with_overrides(d)?,
        None => Prompts::default(),
    })
}

fn sample_examples(args: &SampleArgs) -> Result<ExitCode> {
    let questions = load_questions(&args.questions)?;
    let indices = load_indices(&args.index)?;
    let refs: Vec<&InvertedIndex> = indices.iter().collect();
    let prompts = prompts_from(args.templates_dir.as_deref())?;
    let config = SampleConfig {
        per_set: args.per_set,
        shuffle: args.shuffle,
        seed: args.seed,
    };
    let store = sample_training_sets(&questions, &refs.as_slice(), &prompts, &config)?;
    std::fs::create_dir_all(&args.output)?;
    store.save_dir(&args.output)?;
    for kind in bioqa::fewshot::ExampleKind::SUB_PROBLEMS {
        let n = store.get(kind).map_or(0, |s| s.len());
        println!("{}\t{n}", kind.as_str());
    }
    Ok(ExitCode::SUCCESS)
}

fn select_examples(args: &SelectArgs) -> Result<ExitCode> {
    let questions = load_questions(&args.questions)?;
    let by_id: HashMap<&str, &Question> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let text = std::fs::read_to_string(&args.queries).with_context(|| format!("reading {}", args.queries.display()))?;
    let mut candidates = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let at = || format!("{}:{}", args.queries.display(), n + 1);
        let v: serde_json::Value = serde_json::from_str(line).with_context(at)?;
        let field = |name: &str| {
            v.get(name)
                .and_then(serde_json::Value::as_str)
                .with_context(|| format!("{}: missing string field `{name}`", at()))
        };
        let id = field("id")?;
        let question = by_id
            .get(id)
            .with_context(|| format!("{}: unknown question {id}", at()))?;
        candidates.push(QueryCandidate {
            question,
            query: field("query")?.to_string(),
        });
    }
    let indices = load_indices(&args.index)?;
    let refs: Vec<&InvertedIndex> = indices.iter().collect();
    let (fields, op) = args.query_opts.resolve()?;
    let prompts = prompts_from(args.templates_dir.as_deref())?;
    let (set, ranking) = select_query_examples(&candidates, &refs, &fields, op, args.size, args.k, &prompts);
    std::fs::create_dir_all(&args.output)?;
    let mut store = ExampleStore::default();
    store.insert(set);
    store.save_dir(&args.output)?;
    for c in &ranking {
        println!("{}\t{:.4}\t{}", c.question_id, c.f1, c.error.as_deref().unwrap_or(""));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_settings(args: &RunArgs) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &args.config {
        s.overlay_file(path)?;
    }
    let flag_paths = [
        ("questions", &args.questions),
        ("output", &args.output),
        ("traces", &args.traces),
        ("fixtures", &args.fixtures),
        ("record_fixtures", &args.record_fixtures),
        ("kb_dir", &args.kb_dir),
        ("examples_dir", &args.examples_dir),
        ("templates_dir", &args.templates_dir),
        ("snippet_source", &args.snippet_source),
        ("feedback", &args.feedback),
    ];
    for (key, value) in flag_paths {
        if let Some(p) = value {
            s.set(key, p.display().to_string())?;
        }
    }
    if !args.index.is_empty() {
        let joined: Vec<String> = args.index.iter().map(|p| p.display().to_string()).collect();
        s.set("index", joined.join(","))?;
    }
    for (key, value) in [("phase", &args.phase), ("provider", &args.provider), ("model", &args.model)] {
        if let Some(v) = value {
            s.set(key, v.clone())?;
        }
    }
    if let Some(n) = args.parallelism {
        s.set("parallelism", n.to_string())?;
    }
    if let Some(spec) = &args.shots {
        for (key, n) in config::shots_pairs(spec)? {
            s.set(key, n)?;
        }
    }
    if args.wiki {
        s.set("wiki", "true")?;
    }
    s.overlay_pairs(&args.set)?;
    Ok(s)
}

fn build_provider(s: &Settings) -> Result<Box<dyn ChatProvider>> {
    let model = s.str("model").to_string();
    match s.str("provider") {
        "mock" => {
            let fixtures = match s.path("fixtures") {
                Some(p) => Fixtures::load(&p)?,
                None => {
                    log::warn!("mock provider without fixtures; every request will miss");
                    Fixtures::new()
                }
            };
            Ok(Box::new(MockProvider::new(model, fixtures, s.bool("fixtures_strict")?)))
        }
        "http" => {
            let api_key = s.opt("api_key_env").and_then(|var| std::env::var(var).ok());
            let config = HttpConfig {
                endpoint: s.str("endpoint").to_string(),
                model,
                api_key,
                retry: RetryPolicy {
                    max_attempts: s.parse("max_attempts")?,
                    backoff: s.backoff()?,
                },
                timeout: Duration::from_secs(s.parse("timeout_secs")?),
                requests_per_minute: s.parse("requests_per_minute")?,
            };
            Ok(Box::new(HttpProvider::new(config).map_err(|e| usage(e.to_string()))?))
        }
        other => Err(usage(format!("unknown provider `{other}` (expected mock or http)"))),
    }
}

fn build_kb(s: &Settings) -> Result<Option<Box<dyn KnowledgeBase>>> {
    if !s.bool("wiki")? {
        return Ok(None);
    }
    Ok(Some(match s.path("kb_dir") {
        Some(dir) => Box::new(FixtureKb::new(dir)),
        None => {
            let backoff = s.backoff()?.first().copied().unwrap_or_default();
            Box::new(MediaWikiKb::new(
                s.str("wiki_endpoint"),
                Duration::from_secs(s.parse("timeout_secs")?),
                s.parse("max_attempts")?,
                backoff,
            ))
        }
    }))
}

fn run(args: &RunArgs) -> Result<ExitCode> {
    let s = run_settings(args)?;
    let config = s.pipeline_config()?;
    if config.phase == Phase::PhaseAPlus && s.opt("snippet_source").is_none() {
        return Err(usage("phase_a_plus requires --snippet-source"));
    }
    let index_paths = s.paths("index");
    if config.phase.retrieves() && index_paths.is_empty() {
        return Err(usage(format!("{} requires --index", config.phase.as_str())));
    }
    let questions_path = s.require_path("questions")?;
    let output = s.require_path("output")?;

    let questions = load_questions(&questions_path)?;
    let indices = load_indices(&index_paths)?;
    let refs: Vec<&InvertedIndex> = indices.iter().collect();
    let prompts = prompts_from(s.path("templates_dir").as_deref())?;
    let examples = match s.path("examples_dir") {
        Some(dir) => ExampleStore::load_dir(&dir)?,
        None => ExampleStore::default(),
    };
    let feedback = s.path("feedback").map(|p| load_feedback(&p)).transpose()?;
    let snippet_source = s.path("snippet_source").map(|p| load_run_file(&p)).transpose()?;
    let kb = build_kb(&s)?;
    let base = build_provider(&s)?;
    let recorder = s.opt("record_fixtures").map(|_| RecordingProvider::new(&*base));
    let provider: &dyn ChatProvider = match &recorder {
        Some(r) => r,
        None => &*base,
    };

    let res = Resources {
        provider,
        prompts: &prompts,
        examples: &examples,
        indices: &refs,
        feedback: feedback.as_ref(),
        snippet_source: snippet_source.as_ref(),
        kb: kb.as_deref(),
    };
    let out = pipeline::run(&questions, &config, &res).map_err(|e| match e {
        PipelineError::Config(_) | PipelineError::MissingSnippetSource | PipelineError::Examples(_) => {
            usage(e.to_string())
        }
        other => other.into(),
    })?;

    if let (Some(r), Some(path)) = (&recorder, s.path("record_fixtures")) {
        r.fixtures().save(&path).with_context(|| format!("writing {}", path.display()))?;
    }
    let lookup = (!refs.is_empty()).then_some(&refs as &dyn DocumentLookup);
    write_run_file(&out.run, &output, lookup)?;
    if let Some(dir) = s.path("traces") {
        write_traces(&dir, &out.traces).with_context(|| format!("writing traces to {}", dir.display()))?;
    }
    let failed: Vec<&str> = out
        .traces
        .iter()
        .filter(|t| t.error.is_some())
        .map(|t| t.question_id.as_str())
        .collect();
    if !failed.is_empty() {
        log::warn!("{} question(s) failed and were emitted empty: {}", failed.len(), failed.join(", "));
    }
    eprintln!("wrote {} questions to {}", out.run.questions.len(), output.display());
    Ok(ExitCode::SUCCESS)
}

fn eval(args: &EvalArgs) -> Result<ExitCode> {
    let run = load_run_file(&args.run)?;
    let gold = load_questions(&args.gold)?;
    let indices = load_indices(&args.index)?;
    let refs: Vec<&InvertedIndex> = indices.iter().collect();
    let lookup = (!refs.is_empty()).then_some(&refs as &dyn DocumentLookup);
    let report: Report = evaluate_run(&run, &gold, lookup)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", render_report(&report));
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(args: &ValidateArgs) -> Result<ExitCode> {
    let run = load_run_file(&args.run)?;
    let indices = load_indices(&args.index)?;
    let refs: Vec<&InvertedIndex> = indices.iter().collect();
    let lookup = (!refs.is_empty()).then_some(&refs as &dyn DocumentLookup);
    let violations = match &args.questions {
        Some(path) => validate_run_file(&run, &load_questions(path)?, lookup),
        None => run.intrinsic_violations(lookup),
    };
    if violations.is_empty() {
        println!("ok: {} questions", run.questions.len());
        return Ok(ExitCode::SUCCESS);
    }
    for v in &violations {
        println!("{v}");
    }
    bail!("{} violation(s)", violations.len())
}
