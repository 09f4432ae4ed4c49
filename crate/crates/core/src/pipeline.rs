//! End-to-end runs over a workspace directory.
//!
//! A workspace holds the sanitized corpus, the annotation store journals,
//! recorded model responses, reports and a run manifest:
//!
//! ```text
//! corpus.jsonl  criteria.json  annotators.json  annotations.jsonl
//! adjudications.jsonl  responses.jsonl  failures.jsonl  manifest.json
//! reports/report.json  reports/report.txt
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adjudication::{articles_with_any_disagreement, render_summary, resolution_rate, summary_table, SummaryRow};
use crate::agreement::{consensus_vs_llm, render_report, AgreementReport, ViewOptions};
use crate::annotations::{validate_coverage, AnnotationError, AnnotationStore, Annotator, AnnotatorKind, CoverageReport};
use crate::corpus::{read_corpus, write_corpus, Article, CorpusError};
use crate::criteria::{Aspect, CriteriaError, CriterionId, PromptVersion, Registry};
use crate::llm::{
    annotate_llm, fixture_from_annotations, read_fixture, write_fixture, AnnotateContext, BackendConfig, BackendKind,
    HttpBackend, LlmBackend, LlmError, MockBackend,
};
use crate::twin::{generate, TwinConfig};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const CRITERIA_FILE: &str = "criteria.json";
pub const RESPONSES_FILE: &str = "responses.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORTS_DIR: &str = "reports";
pub const ENV_STORE_DIR: &str = "VERITAS_STORE_DIR";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("CONFIG_INVALID: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Criteria(#[from] CriteriaError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a file, or `None` when it does not exist.
pub fn digest_file(path: &Path) -> Result<Option<String>> {
    match fs::read(path) {
        Ok(bytes) => Ok(Some(sha256_hex(&bytes))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Workspace {
        Workspace { root: root.into() }
    }

    pub fn create(root: impl Into<PathBuf>) -> Result<Workspace> {
        let ws = Workspace::new(root);
        fs::create_dir_all(&ws.root)?;
        Ok(ws)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.path(CORPUS_FILE)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.path(REPORTS_DIR)
    }

    /// The workspace's criteria file, or the built-in registry.
    pub fn registry(&self) -> Result<Registry> {
        let path = self.path(CRITERIA_FILE);
        if path.exists() {
            Ok(Registry::load(&fs::read_to_string(path)?)?)
        } else {
            Ok(Registry::default_registry())
        }
    }

    pub fn corpus(&self) -> Result<Vec<Article>> {
        let path = self.corpus_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        Ok(read_corpus(&path)?)
    }

    pub fn open_store(&self) -> Result<AnnotationStore> {
        let registry = Arc::new(self.registry()?);
        Ok(AnnotationStore::open(&self.root, registry)?)
    }

    pub fn manifest(&self) -> Result<Option<RunManifest>> {
        let path = self.path(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&fs::read_to_string(path)?)?))
    }

    fn record_stage(&self, stage: StageRecord, config_hash: String) -> Result<RunManifest> {
        let mut manifest = self.manifest()?.unwrap_or_else(|| RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: String::new(),
            stages: BTreeMap::new(),
        });
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        manifest.config_hash = config_hash;
        manifest.stages.insert(stage.stage.clone(), stage);
        fs::write(self.path(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    }

    fn digests(&self, names: &[&str]) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for name in names {
            if let Some(d) = digest_file(&self.path(name))? {
                out.insert(name.to_string(), d);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    /// The manifest with wall-clock fields blanked, for comparing runs.
    pub fn without_timestamps(&self) -> RunManifest {
        let mut m = self.clone();
        for stage in m.stages.values_mut() {
            stage.started_at = DateTime::<Utc>::UNIX_EPOCH;
            stage.finished_at = DateTime::<Utc>::UNIX_EPOCH;
        }
        m
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub workspace: PathBuf,
    /// Corpus to annotate; defaults to the workspace corpus.
    pub corpus: Option<PathBuf>,
    /// Criteria registry; defaults to the workspace file or the built-in one.
    pub criteria: Option<PathBuf>,
    pub backend: BackendConfig,
    pub versions: Vec<PromptVersion>,
    pub seed: u64,
    pub concurrency: usize,
    pub language: String,
    pub annotator_id: String,
    /// Stamped on every annotation written by the run.
    pub timestamp: DateTime<Utc>,
    /// Fixture for the mock and replay backends.
    pub fixture: Option<PathBuf>,
    /// Answer for mock calls the fixture does not cover.
    pub default_response: Option<String>,
}

impl RunConfig {
    pub fn new(workspace: impl Into<PathBuf>, backend: BackendKind) -> RunConfig {
        RunConfig {
            workspace: workspace.into(),
            corpus: None,
            criteria: None,
            backend: BackendConfig::new(backend),
            versions: vec![PromptVersion::Initial],
            seed: 0,
            concurrency: 4,
            language: "it".into(),
            annotator_id: "gpt-4o".into(),
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
            fixture: None,
            default_response: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for path in [&self.corpus, &self.criteria, &self.fixture].into_iter().flatten() {
            if !path.exists() {
                return Err(PipelineError::Config(format!("{} does not exist", path.display())));
            }
        }
        if self.versions.is_empty() {
            return Err(PipelineError::Config("no prompt version selected".into()));
        }
        if self.concurrency == 0 {
            return Err(PipelineError::Config("concurrency must be at least 1".into()));
        }
        if self.annotator_id.trim().is_empty() {
            return Err(PipelineError::Config("annotator id is empty".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

/// Builds the backend named in the configuration.
pub fn make_backend(config: &RunConfig) -> Result<Box<dyn LlmBackend>> {
    let fixture = |default: Option<PathBuf>| -> Result<Vec<crate::llm::FixtureEntry>> {
        match config.fixture.clone().or(default) {
            Some(path) if path.exists() => Ok(read_fixture(&path)?),
            Some(path) => Err(PipelineError::Config(format!("fixture {} does not exist", path.display()))),
            None => Ok(Vec::new()),
        }
    };
    Ok(match config.backend.backend_kind {
        BackendKind::Http => Box::new(HttpBackend::new(config.backend.clone())?),
        BackendKind::Mock => Box::new(MockBackend::new(fixture(None)?, config.default_response.clone())),
        BackendKind::Replay => {
            let default = Workspace::new(&config.workspace).path(RESPONSES_FILE);
            Box::new(MockBackend::replay(fixture(Some(default))?))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub article_id: String,
    pub criterion: CriterionId,
    pub version: PromptVersion,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotateOutcome {
    pub planned: usize,
    pub written: usize,
    pub skipped: usize,
    pub inconsistent: usize,
    pub failures: Vec<FailureEntry>,
    pub manifest: RunManifest,
}

/// Annotates every (article, criterion, version) cell not yet in the store.
/// Individual failures go to the failure ledger and do not stop the run.
pub async fn cmd_annotate(config: &RunConfig, backend: &dyn LlmBackend) -> Result<AnnotateOutcome> {
    config.validate()?;
    let started_at = Utc::now();
    let ws = Workspace::create(&config.workspace)?;
    if let Some(path) = &config.criteria {
        let registry = Registry::load(&fs::read_to_string(path)?)?;
        fs::write(ws.path(CRITERIA_FILE), registry.to_json())?;
    }
    if let Some(path) = &config.corpus {
        if path.canonicalize()? != ws.corpus_path().canonicalize().unwrap_or_default() {
            write_corpus(&ws.corpus_path(), &read_corpus(path)?)?;
        }
    }
    let corpus = ws.corpus()?;
    let mut store = ws.open_store()?;
    store.register_annotator(Annotator {
        id: config.annotator_id.clone(),
        kind: AnnotatorKind::Llm,
        label: config.backend.model_id.clone(),
    })?;

    let mut plan = Vec::new();
    let mut skipped = 0;
    for article in &corpus {
        for criterion in CriterionId::ALL {
            for &version in &config.versions {
                let done = store.cell(&article.id, criterion).iter().any(|a| {
                    a.annotator_id == config.annotator_id && a.prompt_version == version
                });
                if done {
                    skipped += 1;
                } else {
                    plan.push((article, criterion, version));
                }
            }
        }
    }
    let planned = plan.len();
    let registry = store.registry_arc();
    let ctx = AnnotateContext {
        language: config.language.clone(),
        annotator_id: config.annotator_id.clone(),
        created_at: config.timestamp,
    };
    let results: Vec<_> = stream::iter(plan)
        .map(|(article, criterion, version)| {
            let registry = Arc::clone(&registry);
            let ctx = &ctx;
            async move {
                let result = annotate_llm(article, registry.get(criterion), version, backend, ctx).await;
                ((article.id.clone(), criterion, version), result)
            }
        })
        .buffer_unordered(config.concurrency)
        .collect()
        .await;

    let mut annotations = Vec::new();
    let mut failures = Vec::new();
    let mut inconsistent = 0;
    for ((article_id, criterion, version), result) in results {
        match result {
            Ok(a) => annotations.push(a),
            Err(LlmError::InconsistentResponses { annotation, .. }) => {
                inconsistent += 1;
                annotations.push(*annotation);
            }
            Err(e) => failures.push(FailureEntry {
                article_id,
                criterion,
                version,
                code: e.code().to_string(),
                message: e.to_string(),
            }),
        }
    }
    annotations.sort_by_key(crate::annotations::Annotation::key);
    failures.sort_by(|a, b| (&a.article_id, a.criterion, a.version).cmp(&(&b.article_id, b.criterion, b.version)));
    let written = annotations.len();
    store.record_all(annotations)?;
    for f in &failures {
        tracing::warn!(article = %f.article_id, criterion = %f.criterion, version = %f.version, code = %f.code, "cell failed");
    }

    let llm_annotations = store
        .annotations()
        .iter()
        .filter(|a| store.kind_of(a) == Some(AnnotatorKind::Llm));
    write_fixture(&ws.path(RESPONSES_FILE), &fixture_from_annotations(llm_annotations))?;
    crate::jsonl::write_all(&ws.path(FAILURES_FILE), &failures)?;

    let mut inputs = ws.digests(&[CORPUS_FILE])?;
    inputs.insert("criteria".into(), sha256_hex(store.registry().to_json().as_bytes()));
    inputs.insert("backend".into(), sha256_hex(serde_json::to_string(&config.backend)?.as_bytes()));
    let outputs = ws.digests(&[crate::annotations::ANNOTATIONS_FILE, RESPONSES_FILE, FAILURES_FILE])?;
    let manifest = ws.record_stage(
        StageRecord {
            stage: "annotate".into(),
            started_at,
            finished_at: Utc::now(),
            inputs,
            outputs,
        },
        config.hash()?,
    )?;
    Ok(AnnotateOutcome {
        planned,
        written,
        skipped,
        inconsistent,
        failures,
        manifest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementEntry {
    pub aspect: Aspect,
    pub criterion: String,
    pub version: PromptVersion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<AgreementReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementEntry {
    pub aspect: Aspect,
    pub initial: f64,
    pub refined: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionEntry {
    pub aspect: Aspect,
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub coverage: CoverageReport,
    pub agreement: Vec<AgreementEntry>,
    pub refinement: Vec<RefinementEntry>,
    pub table5: Vec<SummaryRow>,
    pub resolution: Vec<ResolutionEntry>,
    pub articles_with_disagreement: usize,
}

impl Report {
    pub fn kappa(&self, aspect: Aspect, version: PromptVersion) -> Option<f64> {
        self.agreement
            .iter()
            .find(|e| e.aspect == aspect && e.version == version)
            .and_then(|e| e.report.as_ref())
            .map(|r| r.kappa)
    }

    pub fn has_coverage_violations(&self) -> bool {
        !self.coverage.violations.is_empty() || self.coverage.total == 0
    }
}

/// Aspects reported for agreement: every criterion on its primary aspect.
pub const REPORT_ASPECTS: [Aspect; 6] = [
    Aspect::HeadAcc,
    Aspect::LedePres,
    Aspect::NegTargDetection,
    Aspect::ArtBias,
    Aspect::SensLang,
    Aspect::Type,
];

/// Builds the report from a store and its corpus. With no annotations at all
/// only the coverage section is filled.
pub fn build_report(store: &AnnotationStore, corpus: &[Article], options: ViewOptions) -> Report {
    let coverage = validate_coverage(store, corpus, PromptVersion::Initial);
    if store.annotations().is_empty() {
        return Report {
            coverage,
            agreement: Vec::new(),
            refinement: Vec::new(),
            table5: Vec::new(),
            resolution: Vec::new(),
            articles_with_disagreement: 0,
        };
    }
    let mut agreement = Vec::new();
    for aspect in REPORT_ASPECTS {
        for version in PromptVersion::ALL {
            let (report, error) = match consensus_vs_llm(store, aspect, version, options) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            agreement.push(AgreementEntry {
                aspect,
                criterion: aspect.display_name().to_string(),
                version,
                report,
                error,
            });
        }
    }
    let refinement = REPORT_ASPECTS
        .into_iter()
        .filter_map(|aspect| {
            let kappa = |v| {
                agreement
                    .iter()
                    .find(|e| e.aspect == aspect && e.version == v)
                    .and_then(|e| e.report.as_ref())
                    .map(|r| r.kappa)
            };
            let (initial, refined) = (kappa(PromptVersion::Initial)?, kappa(PromptVersion::Refined)?);
            Some(RefinementEntry {
                aspect,
                initial,
                refined,
                delta: refined - initial,
            })
        })
        .collect();
    let table5 = summary_table(store, corpus.len());
    let resolution = table5
        .iter()
        .map(|row| match resolution_rate(row) {
            Ok(rate) => ResolutionEntry { aspect: row.aspect, rate: Some(rate), error: None },
            Err(e) => ResolutionEntry { aspect: row.aspect, rate: None, error: Some(e.to_string()) },
        })
        .collect();
    Report {
        coverage,
        agreement,
        refinement,
        table5,
        resolution,
        articles_with_disagreement: articles_with_any_disagreement(store).len(),
    }
}

pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    let c = &report.coverage;
    out.push_str(&format!(
        "Coverage: {} articles x {} criteria, {} annotations, {} violations\n",
        c.articles,
        c.criteria,
        c.total,
        c.violations.len()
    ));
    for v in c.violations.iter().take(20) {
        out.push_str(&format!("  {} {}: {}\n", v.article_id, v.criterion, v.reason));
    }
    if c.violations.len() > 20 {
        out.push_str(&format!("  ... {} more\n", c.violations.len() - 20));
    }
    if report.agreement.is_empty() {
        return out;
    }

    out.push_str("\nAgreement between expert consensus and LLM\n");
    out.push_str(&format!(
        "{:<22}  {:<8}  {:>4}  {:>8}  {:<14}\n",
        "Criterion", "Version", "n", "kappa", "band"
    ));
    for e in &report.agreement {
        match &e.report {
            Some(r) => out.push_str(&format!(
                "{:<22}  {:<8}  {:>4}  {:>8.4}  {:<14}\n",
                e.criterion, e.version, r.n, r.kappa, r.band
            )),
            None => out.push_str(&format!("{:<22}  {:<8}  {}\n", e.criterion, e.version, e.error.as_deref().unwrap_or(""))),
        }
    }
    out.push_str("\nPrompt refinement\n");
    for r in &report.refinement {
        out.push_str(&format!(
            "{:<22}  {:.4} -> {:.4}  ({:+.4})\n",
            r.aspect.display_name(),
            r.initial,
            r.refined,
            r.delta
        ));
    }
    out.push_str("\nConfusion matrices\n");
    for e in &report.agreement {
        if let Some(r) = &e.report {
            out.push('\n');
            out.push_str(&render_report(&format!("{} ({})", e.criterion, e.version), r));
        }
    }
    out.push_str("\nDisagreements between experts\n");
    out.push_str(&render_summary(&report.table5));
    out.push_str("\nResolution rate\n");
    for r in &report.resolution {
        match r.rate {
            Some(rate) => out.push_str(&format!("{:<26}  {:>5.1}%\n", r.aspect.display_name(), rate * 100.0)),
            None => out.push_str(&format!("{:<26}  n/a\n", r.aspect.display_name())),
        }
    }
    out.push_str(&format!(
        "\nArticles with at least one disagreement: {}\n",
        report.articles_with_disagreement
    ));
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportOutcome {
    pub report: Report,
    pub json_path: PathBuf,
    pub text_path: PathBuf,
    pub manifest: RunManifest,
}

/// Writes `reports/report.json` and `reports/report.txt` for a workspace.
pub fn cmd_report(workspace: &Path, options: ViewOptions) -> Result<ReportOutcome> {
    let started_at = Utc::now();
    let ws = Workspace::create(workspace)?;
    let store = ws.open_store()?;
    let corpus = ws.corpus()?;
    let report = build_report(&store, &corpus, options);
    fs::create_dir_all(ws.reports_dir())?;
    let json_path = ws.reports_dir().join("report.json");
    let text_path = ws.reports_dir().join("report.txt");
    fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(&text_path, render_text(&report))?;
    let inputs = ws.digests(&[
        CORPUS_FILE,
        crate::annotations::ANNOTATIONS_FILE,
        crate::annotations::ADJUDICATIONS_FILE,
    ])?;
    let outputs = ws.digests(&["reports/report.json", "reports/report.txt"])?;
    let manifest = ws.record_stage(
        StageRecord {
            stage: "report".into(),
            started_at,
            finished_at: Utc::now(),
            inputs,
            outputs,
        },
        sha256_hex(serde_json::to_string(&options)?.as_bytes()),
    )?;
    Ok(ReportOutcome {
        report,
        json_path,
        text_path,
        manifest,
    })
}

/// Writes the synthetic twin into an empty workspace.
pub fn cmd_twin(workspace: &Path, config: &TwinConfig) -> Result<usize> {
    let ws = Workspace::create(workspace)?;
    let existing: BTreeSet<&str> = [crate::annotations::ANNOTATIONS_FILE, CORPUS_FILE]
        .into_iter()
        .filter(|f| ws.path(f).exists())
        .collect();
    if !existing.is_empty() {
        return Err(PipelineError::Config(format!(
            "{} already contains {}",
            workspace.display(),
            existing.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let registry = ws.registry()?;
    let twin = generate(&registry, config);
    write_corpus(&ws.corpus_path(), &twin.corpus)?;
    let mut store = ws.open_store()?;
    twin.load_into(&mut store)?;
    let llm = store
        .annotations()
        .iter()
        .filter(|a| store.kind_of(a) == Some(AnnotatorKind::Llm));
    write_fixture(&ws.path(RESPONSES_FILE), &fixture_from_annotations(llm))?;
    Ok(twin.annotations.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus(dir: &Path, n: usize) -> PathBuf {
        let twin = generate(&Registry::default_registry(), &TwinConfig::default());
        let path = dir.join("in.jsonl");
        write_corpus(&path, &twin.corpus[..n]).unwrap();
        path
    }

    #[tokio::test]
    async fn mock_run_writes_every_cell() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = RunConfig::new(dir.path().join("ws"), BackendKind::Mock);
        config.corpus = Some(tiny_corpus(dir.path(), 10));
        config.versions = PromptVersion::ALL.to_vec();
        config.default_response = Some("No".into());
        let backend = make_backend(&config).unwrap();
        let outcome = cmd_annotate(&config, backend.as_ref()).await.unwrap();
        assert_eq!(outcome.planned, 10 * 6 * 2);
        assert!(outcome.failures.is_empty());
        assert_eq!(outcome.written, 120);
        // "No" only parses for LedePres and NegTarg; the rest store no final answer
        assert_eq!(outcome.inconsistent, 10 * 4 * 2);
        let again = cmd_annotate(&config, backend.as_ref()).await.unwrap();
        assert_eq!((again.planned, again.skipped), (0, 120));
    }

    #[tokio::test]
    async fn strict_mock_fills_the_failure_ledger() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = RunConfig::new(dir.path().join("ws"), BackendKind::Mock);
        config.corpus = Some(tiny_corpus(dir.path(), 2));
        let backend = make_backend(&config).unwrap();
        let outcome = cmd_annotate(&config, backend.as_ref()).await.unwrap();
        assert_eq!(outcome.failures.len(), 12);
        assert!(outcome.failures.iter().all(|f| f.code == "FIXTURE_MISS"));
        let ledger: Vec<FailureEntry> = crate::jsonl::read_all(&dir.path().join("ws").join(FAILURES_FILE)).unwrap();
        assert_eq!(ledger.len(), 12);
    }

    #[test]
    fn empty_store_reports_coverage_only() {
        let dir = tempfile::tempdir().unwrap();
        let outcome = cmd_report(dir.path(), ViewOptions::default()).unwrap();
        assert!(outcome.report.has_coverage_violations());
        assert!(outcome.report.agreement.is_empty());
        let text = fs::read_to_string(outcome.text_path).unwrap();
        assert!(!text.contains("kappa"));
    }
}
