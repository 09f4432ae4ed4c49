use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use veritas_core::adjudication;
use veritas_core::agreement::ViewOptions;
use veritas_core::annotations::{self, Annotator, AnnotatorKind, HumanSource, LlmSource};
use veritas_core::corpus::{
    fetch_corpus, read_corpus, sample_corpus, sanitize, write_corpus, FetchOptions, RedactionConfig, SamplingSpec,
    SourceRegistry,
};
use veritas_core::criteria::{AnswerValue, PromptVersion};
use veritas_core::jsonl;
use veritas_core::llm::{BackendConfig, BackendKind};
use veritas_core::pipeline::{self, RunConfig, Workspace, ENV_STORE_DIR};
use veritas_core::twin::TwinConfig;

use crate::api::{self, AppState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
/// The command finished but some items failed or the data is incomplete.
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "veritas", version, about = "Build a news corpus, annotate it with humans and an LLM, measure agreement")]
pub struct Cli {
    /// Workspace directory holding the corpus, annotation journals and reports.
    #[arg(long, global = true, env = ENV_STORE_DIR, default_value = ".")]
    pub workspace: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fetch, sanitize and sample articles.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Annotate the workspace corpus with an LLM backend.
    Annotate(AnnotateArgs),
    /// Import human annotations from a CSV table.
    ImportHuman(ImportArgs),
    /// Export human and LLM annotations as a CSV table.
    ExportTable {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute coverage, agreement and disagreement statistics.
    Report(ReportArgs),
    #[command(subcommand)]
    Adjudicate(AdjudicateCommand),
    /// Serve the JSON API used by the annotation interface.
    Serve(ServeArgs),
    /// Fill an empty workspace with the synthetic reference dataset.
    Twin {
        #[arg(long, default_value_t = TwinConfig::default().seed)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Download and extract the articles listed in a sources file.
    Fetch {
        #[arg(long)]
        sources: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        delay_ms: u64,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
    },
    /// Replace publisher names and author bylines with placeholders.
    Sanitize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Redaction config (JSON).
        #[arg(long, conflicts_with = "sources", required_unless_present = "sources")]
        redaction: Option<PathBuf>,
        /// Take the publisher names from a sources file instead.
        #[arg(long)]
        sources: Option<PathBuf>,
    },
    /// Draw a fixed number of articles per publisher inside a date window.
    Sample {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to the workspace corpus.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        per_publisher: usize,
        #[arg(long)]
        from: NaiveDate,
        #[arg(long)]
        to: NaiveDate,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VersionChoice {
    Initial,
    Refined,
    Both,
}

impl VersionChoice {
    fn versions(self) -> Vec<PromptVersion> {
        match self {
            VersionChoice::Initial => vec![PromptVersion::Initial],
            VersionChoice::Refined => vec![PromptVersion::Refined],
            VersionChoice::Both => PromptVersion::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendChoice {
    Http,
    Mock,
    Replay,
}

impl From<BackendChoice> for BackendKind {
    fn from(c: BackendChoice) -> BackendKind {
        match c {
            BackendChoice::Http => BackendKind::Http,
            BackendChoice::Mock => BackendKind::Mock,
            BackendChoice::Replay => BackendKind::Replay,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long, value_enum, default_value = "http")]
    pub backend: BackendChoice,
    #[arg(long, value_enum, default_value = "initial")]
    pub version: VersionChoice,
    /// Backend settings (JSON); `--backend` still picks the backend.
    #[arg(long)]
    pub backend_config: Option<PathBuf>,
    /// Response fixture for the mock and replay backends.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Mock answer for requests missing from the fixture.
    #[arg(long)]
    pub default_response: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    #[arg(long, default_value = "it")]
    pub language: String,
    #[arg(long, default_value = "gpt-4o")]
    pub annotator: String,
    /// Timestamp stamped on new annotations; defaults to the Unix epoch.
    #[arg(long)]
    pub timestamp: Option<DateTime<Utc>>,
    /// Corpus to copy into the workspace before annotating.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Criteria registry to copy into the workspace before annotating.
    #[arg(long)]
    pub criteria: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    pub csv: PathBuf,
    #[arg(long)]
    pub timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HumanSourceChoice {
    Remap,
    Recollected,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LlmSourceChoice {
    Runs,
    Remap,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Where refined-version human labels come from.
    #[arg(long, value_enum, default_value = "remap")]
    pub human_source: HumanSourceChoice,
    /// Where refined-version LLM labels come from.
    #[arg(long, value_enum, default_value = "runs")]
    pub llm_source: LlmSourceChoice,
}

impl ReportArgs {
    fn options(&self) -> ViewOptions {
        ViewOptions {
            human: match self.human_source {
                HumanSourceChoice::Remap => HumanSource::Remap,
                HumanSourceChoice::Recollected => HumanSource::Recollected,
            },
            llm: match self.llm_source {
                LlmSourceChoice::Runs => LlmSource::Runs,
                LlmSourceChoice::Remap => LlmSource::Remap,
            },
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum AdjudicateCommand {
    /// Write the open relevant disagreements as JSON, without LLM answers.
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record the ground truth for one disagreement case.
    Record {
        /// Case id such as `HeadAcc:article-id`.
        case_id: String,
        #[arg(long)]
        adjudicator: String,
        #[arg(long, conflicts_with = "indeterminate", required_unless_present = "indeterminate")]
        ground_truth: Option<String>,
        /// The adjudicator could not settle the case.
        #[arg(long)]
        indeterminate: bool,
        #[arg(long)]
        timestamp: Option<DateTime<Utc>>,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Register an annotator before serving, as `id:human` or `id:adjudicator`.
    #[arg(long = "annotator", value_parser = parse_annotator)]
    pub annotators: Vec<Annotator>,
}

fn parse_annotator(s: &str) -> Result<Annotator, String> {
    let (id, kind) = s.split_once(':').ok_or("expected id:kind")?;
    let kind = match kind {
        "human" => AnnotatorKind::Human,
        "adjudicator" => AnnotatorKind::Adjudicator,
        "llm" => AnnotatorKind::Llm,
        other => return Err(format!("unknown annotator kind '{other}'")),
    };
    if id.trim().is_empty() {
        return Err("empty annotator id".into());
    }
    Ok(Annotator::new(id, kind))
}

/// Parses the arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(io::stderr)
        .try_init();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    }
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn write_json<T: serde::Serialize>(out: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn execute(cli: Cli) -> anyhow::Result<i32> {
    let ws = cli.workspace;
    match cli.command {
        Command::Corpus(cmd) => corpus(&ws, cmd),
        Command::Annotate(args) => annotate(&ws, args),
        Command::ImportHuman(args) => import_human(&ws, args),
        Command::ExportTable { out } => {
            let store = Workspace::new(&ws).open_store()?;
            let n = match &out {
                Some(path) => annotations::export_table(&store, fs::File::create(path)?)?,
                None => annotations::export_table(&store, io::stdout().lock())?,
            };
            eprintln!("exported {n} annotations");
            Ok(EXIT_OK)
        }
        Command::Report(args) => {
            let outcome = pipeline::cmd_report(&ws, args.options())?;
            print!("{}", pipeline::render_text(&outcome.report));
            eprintln!("wrote {} and {}", outcome.json_path.display(), outcome.text_path.display());
            Ok(if outcome.report.has_coverage_violations() { EXIT_PARTIAL } else { EXIT_OK })
        }
        Command::Adjudicate(cmd) => adjudicate(&ws, cmd),
        Command::Serve(args) => serve(&ws, args),
        Command::Twin { seed } => {
            let config = TwinConfig {
                seed,
                ..TwinConfig::default()
            };
            let n = pipeline::cmd_twin(&ws, &config)?;
            eprintln!("wrote {n} annotations to {}", ws.display());
            Ok(EXIT_OK)
        }
    }
}

fn corpus(ws: &Path, cmd: CorpusCommand) -> anyhow::Result<i32> {
    match cmd {
        CorpusCommand::Fetch {
            sources,
            out,
            delay_ms,
            concurrency,
        } => {
            if concurrency == 0 {
                bail!("CONFIG_INVALID: concurrency must be at least 1");
            }
            let registry = SourceRegistry::load(&fs::read_to_string(&sources).with_context(|| format!("reading {}", sources.display()))?)?;
            let options = FetchOptions {
                per_host_delay: Duration::from_millis(delay_ms),
                concurrency,
                ..FetchOptions::default()
            };
            let outcome = runtime()?.block_on(fetch_corpus(&registry, &options, Utc::now));
            write_corpus(&out, &outcome.articles)?;
            let failures = out.with_extension("failures.jsonl");
            jsonl::write_all(&failures, &outcome.failures)?;
            eprintln!(
                "fetched {} articles, {} failures (see {})",
                outcome.articles.len(),
                outcome.failures.len(),
                failures.display()
            );
            Ok(if outcome.failures.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
        }
        CorpusCommand::Sanitize {
            input,
            out,
            redaction,
            sources,
        } => {
            let config: RedactionConfig = match (redaction, sources) {
                (Some(path), _) => serde_json::from_str(&fs::read_to_string(&path)?)
                    .with_context(|| format!("parsing {}", path.display()))?,
                (None, Some(path)) => {
                    let registry = SourceRegistry::load(&fs::read_to_string(&path)?)?;
                    serde_json::from_value(serde_json::json!({ "publisher_names": registry.publisher_names() }))?
                }
                (None, None) => bail!("CONFIG_INVALID: --redaction or --sources is required"),
            };
            let articles = read_corpus(&input)?;
            let sanitized = articles
                .iter()
                .map(|a| sanitize(a, &config))
                .collect::<Result<Vec<_>, _>>()?;
            write_corpus(&out, &sanitized)?;
            eprintln!("sanitized {} articles", sanitized.len());
            Ok(EXIT_OK)
        }
        CorpusCommand::Sample {
            input,
            out,
            per_publisher,
            from,
            to,
            seed,
        } => {
            let spec = SamplingSpec {
                per_publisher,
                window_start: from,
                window_end: to,
            };
            let articles = read_corpus(&input)?;
            let sample = sample_corpus(&articles, &spec, seed)?;
            let out = match out {
                Some(path) => path,
                None => Workspace::create(ws)?.corpus_path(),
            };
            write_corpus(&out, &sample)?;
            eprintln!("sampled {} articles into {}", sample.len(), out.display());
            Ok(EXIT_OK)
        }
    }
}

fn annotate(ws: &Path, args: AnnotateArgs) -> anyhow::Result<i32> {
    let kind = BackendKind::from(args.backend);
    let backend = match &args.backend_config {
        Some(path) => {
            let mut config: BackendConfig = serde_json::from_str(&fs::read_to_string(path)?)
                .with_context(|| format!("parsing {}", path.display()))?;
            config.backend_kind = kind;
            config
        }
        None => BackendConfig::new(kind),
    }
    .with_env();
    let mut config = RunConfig::new(ws, kind);
    config.backend = backend;
    config.versions = args.version.versions();
    config.concurrency = args.concurrency;
    config.language = args.language;
    config.annotator_id = args.annotator;
    config.fixture = args.fixture;
    config.default_response = args.default_response;
    config.corpus = args.corpus;
    config.criteria = args.criteria;
    if let Some(ts) = args.timestamp {
        config.timestamp = ts;
    }
    config.validate()?;
    let backend = pipeline::make_backend(&config)?;
    let outcome = runtime()?.block_on(pipeline::cmd_annotate(&config, backend.as_ref()))?;
    eprintln!(
        "planned {}, written {}, skipped {}, inconsistent {}, failed {}",
        outcome.planned,
        outcome.written,
        outcome.skipped,
        outcome.inconsistent,
        outcome.failures.len()
    );
    Ok(if outcome.failures.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn import_human(ws: &Path, args: ImportArgs) -> anyhow::Result<i32> {
    let workspace = Workspace::create(ws)?;
    let corpus = workspace.corpus()?;
    let known: BTreeSet<String> = corpus.iter().map(|a| a.id.clone()).collect();
    let text = fs::read_to_string(&args.csv).with_context(|| format!("reading {}", args.csv.display()))?;
    let names: BTreeSet<String> = csv_annotators(&text);
    let map: BTreeMap<String, Annotator> = names
        .into_iter()
        .map(|name| (name.clone(), Annotator::new(name, AnnotatorKind::Human)))
        .collect();
    let mut store = workspace.open_store()?;
    let timestamp = args.timestamp.unwrap_or_else(Utc::now);
    let imported = annotations::import_table(&mut store, text.as_bytes(), &map, timestamp, Some(&known))?;
    eprintln!("imported {} annotations", imported.len());
    Ok(EXIT_OK)
}

/// Values of the `annotator` column; malformed rows are left to the importer.
fn csv_annotators(text: &str) -> BTreeSet<String> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let column = reader
        .headers()
        .ok()
        .and_then(|h| h.iter().position(|f| f == "annotator"));
    let Some(column) = column else { return BTreeSet::new() };
    reader
        .records()
        .filter_map(Result::ok)
        .filter_map(|r| r.get(column).map(str::to_string))
        .filter(|s| !s.is_empty())
        .collect()
}

fn adjudicate(ws: &Path, cmd: AdjudicateCommand) -> anyhow::Result<i32> {
    let workspace = Workspace::create(ws)?;
    match cmd {
        AdjudicateCommand::Export { out } => {
            let store = workspace.open_store()?;
            let corpus = workspace.corpus()?;
            let queue = adjudication::adjudication_queue(&store, &corpus);
            write_json(out.as_deref(), &queue)?;
            eprintln!("{} open cases", queue.len());
            Ok(EXIT_OK)
        }
        AdjudicateCommand::Record {
            case_id,
            adjudicator,
            ground_truth,
            indeterminate: _,
            timestamp,
        } => {
            let mut store = workspace.open_store()?;
            if store.annotator(&adjudicator).is_none() {
                store.register_annotator(Annotator::new(adjudicator.clone(), AnnotatorKind::Adjudicator))?;
            }
            let case = adjudication::record_adjudication(
                &mut store,
                &case_id,
                &adjudicator,
                ground_truth.map(AnswerValue::new),
                timestamp.unwrap_or_else(Utc::now),
            )?;
            write_json(None, &case)?;
            Ok(EXIT_OK)
        }
    }
}

fn serve(ws: &Path, args: ServeArgs) -> anyhow::Result<i32> {
    let workspace = Workspace::create(ws)?;
    let mut store = workspace.open_store()?;
    for annotator in args.annotators {
        store.register_annotator(annotator)?;
    }
    let corpus = workspace.corpus()?;
    let state = Arc::new(AppState::new(store, corpus));
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .with_context(|| format!("invalid address {}:{}", args.host, args.port))?;
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!("listening on {}", listener.local_addr()?);
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, api::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    Ok(EXIT_OK)
}
