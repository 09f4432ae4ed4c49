//! Append-only annotation store with coverage and consensus views.
//!
//! Annotations live in `annotations.jsonl`, annotators in `annotators.json`
//! and adjudication results in `adjudications.jsonl`, all inside one store
//! directory. The in-memory index is rebuilt on open. Binary (refined) views
//! of four-class human answers are derived on read and never written.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Article;
use crate::criteria::{
    remap_answer, AnswerValue, Aspect, CriterionId, PromptVersion, Registry, RemapRule,
};
use crate::jsonl;
use crate::llm::{Consistency, LlmAnnotationEvidence};

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const ANNOTATORS_FILE: &str = "annotators.json";
pub const ADJUDICATIONS_FILE: &str = "adjudications.jsonl";

pub const CSV_HEADER: [&str; 6] = [
    "article_id",
    "criterion",
    "annotator",
    "version",
    "answer",
    "sub_answer",
];

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("DUPLICATE_ANNOTATION: {0}")]
    Duplicate(String),
    #[error("SCHEMA_VIOLATION: {0}")]
    SchemaViolation(String),
    #[error("ROW_INVALID: row {row}: {cause}")]
    RowInvalid { row: u64, cause: String },
    #[error("COVERAGE_INCOMPLETE: {article_id}/{criterion} has {found} human annotations, need 2")]
    CoverageIncomplete {
        article_id: String,
        criterion: CriterionId,
        found: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl AnnotationError {
    pub fn code(&self) -> &'static str {
        match self {
            AnnotationError::Duplicate(_) => "DUPLICATE_ANNOTATION",
            AnnotationError::SchemaViolation(_) => "SCHEMA_VIOLATION",
            AnnotationError::RowInvalid { .. } => "ROW_INVALID",
            AnnotationError::CoverageIncomplete { .. } => "COVERAGE_INCOMPLETE",
            AnnotationError::Io(_) | AnnotationError::Json(_) | AnnotationError::Csv(_) => "IO_ERROR",
        }
    }
}

pub type Result<T, E = AnnotationError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotatorKind {
    Human,
    Llm,
    Adjudicator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotator {
    pub id: String,
    pub kind: AnnotatorKind,
    pub label: String,
}

impl Annotator {
    pub fn new(id: impl Into<String>, kind: AnnotatorKind) -> Annotator {
        let id = id.into();
        Annotator {
            label: id.clone(),
            id,
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub article_id: String,
    pub criterion_id: CriterionId,
    pub annotator_id: String,
    pub prompt_version: PromptVersion,
    /// Absent only for LLM annotations whose repetitions disagreed.
    pub answer: Option<AnswerValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_answer: Option<AnswerValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<LlmAnnotationEvidence>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnnotationKey {
    pub article_id: String,
    pub criterion_id: CriterionId,
    pub annotator_id: String,
    pub prompt_version: PromptVersion,
}

impl std::fmt::Display for AnnotationKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.article_id, self.criterion_id, self.annotator_id, self.prompt_version
        )
    }
}

impl Annotation {
    pub fn key(&self) -> AnnotationKey {
        AnnotationKey {
            article_id: self.article_id.clone(),
            criterion_id: self.criterion_id,
            annotator_id: self.annotator_id.clone(),
            prompt_version: self.prompt_version,
        }
    }
}

/// Ground truth recorded by an adjudicator for one disagreement case.
/// `ground_truth: None` means the adjudicator could not decide.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicationRecord {
    pub case_id: String,
    pub article_id: String,
    pub aspect: Aspect,
    pub adjudicator_id: String,
    pub ground_truth: Option<AnswerValue>,
    pub created_at: DateTime<Utc>,
}

/// Annotation store. Writes take `&mut self`; share behind a lock for
/// single-writer, many-reader access.
#[derive(Debug, Clone)]
pub struct AnnotationStore {
    dir: Option<PathBuf>,
    registry: Arc<Registry>,
    annotators: BTreeMap<String, Annotator>,
    annotations: Vec<Annotation>,
    index: BTreeMap<AnnotationKey, usize>,
    cells: BTreeMap<(String, CriterionId), Vec<usize>>,
    adjudications: Vec<AdjudicationRecord>,
}

impl AnnotationStore {
    pub fn in_memory(registry: Arc<Registry>) -> AnnotationStore {
        AnnotationStore {
            dir: None,
            registry,
            annotators: BTreeMap::new(),
            annotations: Vec::new(),
            index: BTreeMap::new(),
            cells: BTreeMap::new(),
            adjudications: Vec::new(),
        }
    }

    /// Opens (creating if needed) a store directory and replays its journals.
    pub fn open(dir: &Path, registry: Arc<Registry>) -> Result<AnnotationStore> {
        fs::create_dir_all(dir)?;
        let mut store = AnnotationStore::in_memory(registry);
        let annotators_path = dir.join(ANNOTATORS_FILE);
        if annotators_path.exists() {
            let list: Vec<Annotator> = serde_json::from_str(&fs::read_to_string(&annotators_path)?)?;
            store.annotators = list.into_iter().map(|a| (a.id.clone(), a)).collect();
        }
        for annotation in jsonl::read_all::<Annotation>(&dir.join(ANNOTATIONS_FILE))? {
            store.validate(&annotation)?;
            store.push(annotation);
        }
        store.adjudications = jsonl::read_all(&dir.join(ADJUDICATIONS_FILE))?;
        store.dir = Some(dir.to_path_buf());
        Ok(store)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn registry_arc(&self) -> Arc<Registry> {
        Arc::clone(&self.registry)
    }

    pub fn annotators(&self) -> impl Iterator<Item = &Annotator> {
        self.annotators.values()
    }

    pub fn annotator(&self, id: &str) -> Option<&Annotator> {
        self.annotators.get(id)
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn adjudications(&self) -> &[AdjudicationRecord] {
        &self.adjudications
    }

    /// Latest adjudication per case; later records supersede earlier ones.
    pub fn latest_adjudication(&self, case_id: &str) -> Option<&AdjudicationRecord> {
        self.adjudications.iter().rev().find(|r| r.case_id == case_id)
    }

    pub fn get(&self, key: &AnnotationKey) -> Option<&Annotation> {
        self.index.get(key).map(|&i| &self.annotations[i])
    }

    /// All annotations for one (article, criterion) cell, in journal order.
    pub fn cell(&self, article_id: &str, criterion: CriterionId) -> Vec<&Annotation> {
        self.cells
            .get(&(article_id.to_string(), criterion))
            .map(|ids| ids.iter().map(|&i| &self.annotations[i]).collect())
            .unwrap_or_default()
    }

    pub fn kind_of(&self, annotation: &Annotation) -> Option<AnnotatorKind> {
        self.annotators.get(&annotation.annotator_id).map(|a| a.kind)
    }

    pub fn register_annotator(&mut self, annotator: Annotator) -> Result<()> {
        if let Some(existing) = self.annotators.get(&annotator.id) {
            if existing.kind != annotator.kind {
                return Err(AnnotationError::SchemaViolation(format!(
                    "annotator '{}' is already registered as {:?}",
                    annotator.id, existing.kind
                )));
            }
            return Ok(());
        }
        self.annotators.insert(annotator.id.clone(), annotator);
        self.persist_annotators()
    }

    fn persist_annotators(&self) -> Result<()> {
        if let Some(dir) = &self.dir {
            let list: Vec<&Annotator> = self.annotators.values().collect();
            let mut file = fs::File::create(dir.join(ANNOTATORS_FILE))?;
            file.write_all(serde_json::to_string_pretty(&list)?.as_bytes())?;
            file.write_all(b"\n")?;
            file.sync_all()?;
        }
        Ok(())
    }

    /// Checks an annotation against the registry and the store, without writing.
    pub fn validate(&self, annotation: &Annotation) -> Result<()> {
        let violation = |m: String| Err(AnnotationError::SchemaViolation(m));
        let Some(annotator) = self.annotators.get(&annotation.annotator_id) else {
            return violation(format!("unknown annotator '{}'", annotation.annotator_id));
        };
        if self.index.contains_key(&annotation.key()) {
            return Err(AnnotationError::Duplicate(annotation.key().to_string()));
        }
        let criterion = self.registry.get(annotation.criterion_id);
        let schema = criterion.schema(annotation.prompt_version);
        match (&annotation.answer, annotator.kind) {
            (Some(answer), _) => {
                if !schema.contains(answer) {
                    return violation(format!(
                        "'{answer}' is not an option of {} ({})",
                        criterion.id, annotation.prompt_version
                    ));
                }
            }
            (None, AnnotatorKind::Llm) => {
                let inconsistent = annotation
                    .evidence
                    .as_ref()
                    .is_some_and(|e| e.consistency == Consistency::Inconsistent);
                if !inconsistent {
                    return violation("LLM annotation without answer must be inconsistent".into());
                }
            }
            (None, _) => return violation("answer is required".into()),
        }
        let affirmative = schema.affirmative();
        let needs_issue = criterion.id == CriterionId::NegTarg
            && annotation.answer.is_some()
            && annotation.answer == affirmative;
        match (&annotation.sub_answer, needs_issue) {
            (None, true) => return violation("NegTarg answer Yes requires an issue".into()),
            (Some(_), false) => return violation("sub_answer only accompanies NegTarg Yes".into()),
            (Some(issue), true) => {
                let sub = schema.sub_schema.as_deref().expect("NegTarg is compound");
                if !sub.contains(issue) {
                    return violation(format!("'{issue}' is not a NegTarg issue"));
                }
            }
            (None, false) => {}
        }
        if annotation.evidence.is_some() && annotator.kind != AnnotatorKind::Llm {
            return violation("only LLM annotations carry evidence".into());
        }
        Ok(())
    }

    pub fn record(&mut self, annotation: Annotation) -> Result<()> {
        self.record_all(vec![annotation])
    }

    /// Validates the whole batch first and writes all or nothing.
    pub fn record_all(&mut self, batch: Vec<Annotation>) -> Result<()> {
        let mut keys = BTreeSet::new();
        for annotation in &batch {
            self.validate(annotation)?;
            if !keys.insert(annotation.key()) {
                return Err(AnnotationError::Duplicate(annotation.key().to_string()));
            }
        }
        if let Some(dir) = &self.dir {
            jsonl::append(&dir.join(ANNOTATIONS_FILE), &batch)?;
        }
        for annotation in batch {
            self.push(annotation);
        }
        Ok(())
    }

    fn push(&mut self, annotation: Annotation) {
        let i = self.annotations.len();
        self.index.insert(annotation.key(), i);
        self.cells
            .entry((annotation.article_id.clone(), annotation.criterion_id))
            .or_default()
            .push(i);
        self.annotations.push(annotation);
    }

    /// Article ids with at least one annotation for `criterion`, sorted.
    pub fn articles_for(&self, criterion: CriterionId) -> Vec<&str> {
        self.cells
            .keys()
            .filter(|(_, c)| *c == criterion)
            .map(|(a, _)| a.as_str())
            .collect()
    }

    pub fn append_adjudication(&mut self, record: AdjudicationRecord) -> Result<()> {
        match self.annotators.get(&record.adjudicator_id) {
            Some(a) if a.kind == AnnotatorKind::Adjudicator => {}
            _ => {
                return Err(AnnotationError::SchemaViolation(format!(
                    "'{}' is not a registered adjudicator",
                    record.adjudicator_id
                )))
            }
        }
        if let Some(dir) = &self.dir {
            jsonl::append(&dir.join(ADJUDICATIONS_FILE), std::slice::from_ref(&record))?;
        }
        self.adjudications.push(record);
        Ok(())
    }

    fn by_kind(&self, article_id: &str, criterion: CriterionId, kind: AnnotatorKind) -> Vec<&Annotation> {
        self.cell(article_id, criterion)
            .into_iter()
            .filter(|a| self.kind_of(a) == Some(kind))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageViolation {
    pub article_id: String,
    pub criterion: CriterionId,
    pub humans: usize,
    pub llms: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub articles: usize,
    pub criteria: usize,
    pub human_per_cell: usize,
    pub llm_per_cell: usize,
    pub total: usize,
    pub violations: Vec<CoverageViolation>,
}

impl CoverageReport {
    pub fn is_complete(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks each (article, criterion) cell has two distinct human annotators
/// and one LLM annotation for `llm_version`. Adjudicators are ignored.
pub fn validate_coverage(
    store: &AnnotationStore,
    corpus: &[Article],
    llm_version: PromptVersion,
) -> CoverageReport {
    let criteria: Vec<CriterionId> = store.registry().criteria().iter().map(|c| c.id).collect();
    let article_ids: BTreeSet<&str> = corpus.iter().map(|a| a.id.as_str()).collect();
    let mut humans: BTreeMap<(&str, CriterionId), BTreeSet<&str>> = BTreeMap::new();
    let mut llms: BTreeMap<(&str, CriterionId), usize> = BTreeMap::new();
    let mut violations = Vec::new();
    let mut orphans: BTreeSet<(&str, CriterionId)> = BTreeSet::new();
    for a in store.annotations() {
        let cell = (a.article_id.as_str(), a.criterion_id);
        match store.kind_of(a) {
            Some(AnnotatorKind::Human) => {
                humans.entry(cell).or_default().insert(a.annotator_id.as_str());
            }
            Some(AnnotatorKind::Llm) if a.prompt_version == llm_version => {
                *llms.entry(cell).or_default() += 1;
            }
            _ => continue,
        }
        if !article_ids.contains(cell.0) {
            orphans.insert(cell);
        }
    }
    let mut total = 0;
    for article in corpus {
        for &criterion in &criteria {
            let cell = (article.id.as_str(), criterion);
            let h = humans.get(&cell).map_or(0, BTreeSet::len);
            let l = llms.get(&cell).copied().unwrap_or(0);
            total += h + l;
            let mut reasons = Vec::new();
            if h != 2 {
                reasons.push(format!("{h} human annotators, expected 2"));
            }
            if l != 1 {
                reasons.push(format!("{l} LLM annotations ({llm_version}), expected 1"));
            }
            if !reasons.is_empty() {
                violations.push(CoverageViolation {
                    article_id: article.id.clone(),
                    criterion,
                    humans: h,
                    llms: l,
                    reason: reasons.join("; "),
                });
            }
        }
    }
    for (article_id, criterion) in orphans {
        violations.push(CoverageViolation {
            article_id: article_id.to_string(),
            criterion,
            humans: humans.get(&(article_id, criterion)).map_or(0, BTreeSet::len),
            llms: llms.get(&(article_id, criterion)).copied().unwrap_or(0),
            reason: "article is not in the corpus".into(),
        });
    }
    CoverageReport {
        articles: corpus.len(),
        criteria: criteria.len(),
        human_per_cell: 2,
        llm_per_cell: 1,
        total,
        violations,
    }
}

/// Where refined-version human labels come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HumanSource {
    /// Remap the initial answers onto the requested version's schema.
    #[default]
    Remap,
    /// Use human annotations recorded under the requested version.
    Recollected,
}

/// Where refined-version LLM labels come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmSource {
    /// LLM annotations produced with the requested prompt version.
    #[default]
    Runs,
    /// Remap the initial-prompt LLM answers.
    Remap,
}

/// The two human labels of a cell, or their agreement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Consensus {
    Agreed(AnswerValue),
    /// Both labels, sorted so the marker does not depend on annotation order.
    Disagreement(AnswerValue, AnswerValue),
}

/// One annotator's label projected onto an aspect and version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AspectLabel {
    pub annotator_id: String,
    pub label: AnswerValue,
}

fn project(
    store: &AnnotationStore,
    annotation: &Annotation,
    aspect: Aspect,
    remap_to: Option<PromptVersion>,
) -> Option<AnswerValue> {
    let answer = annotation.answer.as_ref()?;
    let answer = match remap_to {
        Some(version) if version != annotation.prompt_version => {
            let rule = RemapRule::between(
                store.registry().get(annotation.criterion_id),
                annotation.prompt_version,
                version,
            );
            remap_answer(answer, &rule).ok()?
        }
        _ => answer.clone(),
    };
    Some(aspect.label_of(&answer, annotation.sub_answer.as_ref()))
}

/// Human labels for a cell on `aspect` under `version`.
pub fn human_labels(
    store: &AnnotationStore,
    article_id: &str,
    aspect: Aspect,
    version: PromptVersion,
    source: HumanSource,
) -> Vec<AspectLabel> {
    let stored_version = match source {
        HumanSource::Remap => PromptVersion::Initial,
        HumanSource::Recollected => version,
    };
    let mut labels: Vec<AspectLabel> = store
        .by_kind(article_id, aspect.criterion(), AnnotatorKind::Human)
        .into_iter()
        .filter(|a| a.prompt_version == stored_version)
        .filter_map(|a| {
            project(store, a, aspect, Some(version)).map(|label| AspectLabel {
                annotator_id: a.annotator_id.clone(),
                label,
            })
        })
        .collect();
    labels.sort_by(|a, b| a.annotator_id.cmp(&b.annotator_id));
    labels
}

/// The LLM's answer for a cell, if one was recorded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LlmLabel {
    Final(AnswerValue),
    /// Recorded, but the repetitions disagreed.
    NoFinal,
    Missing,
}

pub fn llm_label(
    store: &AnnotationStore,
    article_id: &str,
    aspect: Aspect,
    version: PromptVersion,
    source: LlmSource,
) -> LlmLabel {
    let stored_version = match source {
        LlmSource::Runs => version,
        LlmSource::Remap => PromptVersion::Initial,
    };
    let mut candidates = store
        .by_kind(article_id, aspect.criterion(), AnnotatorKind::Llm)
        .into_iter()
        .filter(|a| a.prompt_version == stored_version)
        .collect::<Vec<_>>();
    candidates.sort_by(|a, b| a.annotator_id.cmp(&b.annotator_id));
    match candidates.first() {
        None => LlmLabel::Missing,
        Some(a) if a.answer.is_none() => LlmLabel::NoFinal,
        Some(a) => project(store, a, aspect, Some(version))
            .map(LlmLabel::Final)
            .unwrap_or(LlmLabel::NoFinal),
    }
}

/// Consensus of the two human labels of a cell on an aspect.
pub fn aspect_consensus(
    store: &AnnotationStore,
    article_id: &str,
    aspect: Aspect,
    version: PromptVersion,
    source: HumanSource,
) -> Result<Consensus> {
    let labels = human_labels(store, article_id, aspect, version, source);
    match labels.as_slice() {
        [a, b] if a.label == b.label => Ok(Consensus::Agreed(a.label.clone())),
        [a, b] => {
            let (x, y) = if a.label <= b.label {
                (a.label.clone(), b.label.clone())
            } else {
                (b.label.clone(), a.label.clone())
            };
            Ok(Consensus::Disagreement(x, y))
        }
        other => Err(AnnotationError::CoverageIncomplete {
            article_id: article_id.to_string(),
            criterion: aspect.criterion(),
            found: other.len(),
        }),
    }
}

/// Consensus of the initial human answers for a cell.
pub fn consensus(store: &AnnotationStore, article_id: &str, criterion: CriterionId) -> Result<Consensus> {
    aspect_consensus(
        store,
        article_id,
        Aspect::primary(criterion),
        PromptVersion::Initial,
        HumanSource::Remap,
    )
}

/// Parses a CSV annotation table and records it atomically.
///
/// `annotator_map` resolves the CSV `annotator` column; annotators used are
/// registered in the store. When `known_articles` is given, rows for other
/// articles are rejected. Row numbers in errors count the header as row 1.
pub fn import_table<R: Read>(
    store: &mut AnnotationStore,
    reader: R,
    annotator_map: &BTreeMap<String, Annotator>,
    created_at: DateTime<Utc>,
    known_articles: Option<&BTreeSet<String>>,
) -> Result<Vec<Annotation>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(AnnotationError::RowInvalid {
            row: 1,
            cause: format!("header must be {}", CSV_HEADER.join(",")),
        });
    }
    let mut staged = store.clone();
    staged.dir = None;
    let mut batch = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let row = i as u64 + 2;
        let invalid = |cause: String| AnnotationError::RowInvalid { row, cause };
        let record = record.map_err(|e| invalid(e.to_string()))?;
        let field = |n: usize| record.get(n).unwrap_or("").to_string();
        let criterion: CriterionId = field(1).parse().map_err(|e: crate::criteria::CriteriaError| invalid(e.to_string()))?;
        let version: PromptVersion = field(3).parse().map_err(|e: crate::criteria::CriteriaError| invalid(e.to_string()))?;
        let annotator = annotator_map
            .get(&field(2))
            .ok_or_else(|| invalid(format!("unknown annotator '{}'", field(2))))?;
        staged
            .register_annotator(annotator.clone())
            .map_err(|e| invalid(e.to_string()))?;
        let answer = field(4);
        let sub_answer = field(5);
        let annotation = Annotation {
            article_id: field(0),
            criterion_id: criterion,
            annotator_id: annotator.id.clone(),
            prompt_version: version,
            answer: (!answer.is_empty()).then(|| AnswerValue::new(answer)),
            sub_answer: (!sub_answer.is_empty()).then(|| AnswerValue::new(sub_answer)),
            evidence: None,
            created_at,
        };
        if annotation.article_id.is_empty() {
            return Err(invalid("empty article_id".into()));
        }
        if known_articles.is_some_and(|known| !known.contains(&annotation.article_id)) {
            return Err(invalid(format!("unknown article '{}'", annotation.article_id)));
        }
        staged.record(annotation.clone()).map_err(|e| match e {
            AnnotationError::Duplicate(key) => invalid(format!("DUPLICATE: {key}")),
            other => invalid(other.to_string()),
        })?;
        batch.push(annotation);
    }
    for annotator in annotator_map.values() {
        if batch.iter().any(|a| a.annotator_id == annotator.id) {
            store.register_annotator(annotator.clone())?;
        }
    }
    store.record_all(batch.clone())?;
    Ok(batch)
}

/// Writes answered human and LLM annotations as a CSV table.
pub fn export_table<W: Write>(store: &AnnotationStore, writer: W) -> Result<usize> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(CSV_HEADER)?;
    let mut n = 0;
    for a in store.annotations() {
        if !matches!(store.kind_of(a), Some(AnnotatorKind::Human | AnnotatorKind::Llm)) {
            continue;
        }
        let Some(answer) = &a.answer else { continue };
        csv.write_record([
            a.article_id.as_str(),
            a.criterion_id.as_str(),
            a.annotator_id.as_str(),
            a.prompt_version.as_str(),
            answer.as_str(),
            a.sub_answer.as_ref().map_or("", |s| s.as_str()),
        ])?;
        n += 1;
    }
    csv.flush()?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn at() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2021, 11, 2, 9, 0, 0).unwrap()
    }

    fn store() -> AnnotationStore {
        let mut s = AnnotationStore::in_memory(Arc::new(Registry::default_registry()));
        for (id, kind) in [
            ("alice", AnnotatorKind::Human),
            ("bob", AnnotatorKind::Human),
            ("carla", AnnotatorKind::Human),
            ("llm", AnnotatorKind::Llm),
        ] {
            s.register_annotator(Annotator::new(id, kind)).unwrap();
        }
        s
    }

    fn ann(article: &str, c: CriterionId, who: &str, answer: &str, sub: Option<&str>) -> Annotation {
        Annotation {
            article_id: article.into(),
            criterion_id: c,
            annotator_id: who.into(),
            prompt_version: PromptVersion::Initial,
            answer: Some(AnswerValue::new(answer)),
            sub_answer: sub.map(AnswerValue::new),
            evidence: None,
            created_at: at(),
        }
    }

    #[test]
    fn record_and_lookup() {
        let mut s = store();
        s.record(ann("a1", CriterionId::HeadAcc, "alice", "Accurate", None)).unwrap();
        let cell = s.cell("a1", CriterionId::HeadAcc);
        assert_eq!(cell.len(), 1);
        assert_eq!(cell[0].answer.as_ref().unwrap().as_str(), "Accurate");
    }

    #[test]
    fn duplicates_and_schema_violations() {
        let mut s = store();
        s.record(ann("a1", CriterionId::HeadAcc, "alice", "Accurate", None)).unwrap();
        let dup = s.record(ann("a1", CriterionId::HeadAcc, "alice", "Inaccurate", None));
        assert!(matches!(dup, Err(AnnotationError::Duplicate(_))));
        let missing_issue = s.record(ann("a1", CriterionId::NegTarg, "alice", "Yes", None));
        assert!(matches!(missing_issue, Err(AnnotationError::SchemaViolation(_))));
        let stray_issue = s.record(ann("a1", CriterionId::NegTarg, "alice", "No", Some("Politics")));
        assert!(matches!(stray_issue, Err(AnnotationError::SchemaViolation(_))));
        let bad = s.record(ann("a1", CriterionId::LedePres, "alice", "Maybe", None));
        assert!(matches!(bad, Err(AnnotationError::SchemaViolation(_))));
        let stranger = s.record(ann("a1", CriterionId::LedePres, "zed", "Yes", None));
        assert!(matches!(stranger, Err(AnnotationError::SchemaViolation(_))));
        s.record(ann("a1", CriterionId::NegTarg, "alice", "Yes", Some("Gender"))).unwrap();
    }

    #[test]
    fn batch_is_all_or_nothing() {
        let mut s = store();
        let batch = vec![
            ann("a1", CriterionId::HeadAcc, "alice", "Accurate", None),
            ann("a1", CriterionId::HeadAcc, "bob", "Nope", None),
        ];
        assert!(s.record_all(batch).is_err());
        assert!(s.annotations().is_empty());
    }

    #[test]
    fn consensus_cases() {
        let mut s = store();
        s.record(ann("a1", CriterionId::SensLang, "alice", "Neutral", None)).unwrap();
        assert!(matches!(
            consensus(&s, "a1", CriterionId::SensLang),
            Err(AnnotationError::CoverageIncomplete { found: 1, .. })
        ));
        s.record(ann("a1", CriterionId::SensLang, "bob", "Neutral", None)).unwrap();
        assert_eq!(
            consensus(&s, "a1", CriterionId::SensLang).unwrap(),
            Consensus::Agreed(AnswerValue::new("Neutral"))
        );
        s.record(ann("a1", CriterionId::LedePres, "alice", "Yes", None)).unwrap();
        s.record(ann("a1", CriterionId::LedePres, "bob", "No", None)).unwrap();
        assert_eq!(
            consensus(&s, "a1", CriterionId::LedePres).unwrap(),
            Consensus::Disagreement(AnswerValue::new("No"), AnswerValue::new("Yes"))
        );
    }

    #[test]
    fn refined_view_is_computed_on_read() {
        let mut s = store();
        s.record(ann("a1", CriterionId::ArtBias, "alice", "Biased", None)).unwrap();
        s.record(ann("a1", CriterionId::ArtBias, "bob", "Quite biased", None)).unwrap();
        assert!(matches!(
            consensus(&s, "a1", CriterionId::ArtBias).unwrap(),
            Consensus::Disagreement(..)
        ));
        let refined = aspect_consensus(
            &s,
            "a1",
            Aspect::ArtBias,
            PromptVersion::Refined,
            HumanSource::Remap,
        )
        .unwrap();
        assert_eq!(refined, Consensus::Agreed(AnswerValue::new("Biased")));
        assert_eq!(s.annotations().len(), 2);
    }

    fn article(id: &str) -> Article {
        Article {
            id: id.into(),
            publisher_id: "p".into(),
            url: url::Url::parse("https://example.org/x").unwrap(),
            title: "t".into(),
            body: "b".into(),
            published_at: chrono::NaiveDate::from_ymd_opt(2021, 5, 1).unwrap(),
            fetched_at: at(),
            sanitized: true,
        }
    }

    fn full_cell(s: &mut AnnotationStore, article: &str) {
        for c in CriterionId::ALL {
            let (answer, sub) = match c {
                CriterionId::HeadAcc => ("Accurate", None),
                CriterionId::LedePres => ("Yes", None),
                CriterionId::NegTarg => ("Yes", Some("Politics")),
                CriterionId::ArtBias => ("Unbiased", None),
                CriterionId::SensLang => ("Neutral", None),
                CriterionId::Type => ("Satire", None),
            };
            for who in ["alice", "bob", "llm"] {
                s.record(ann(article, c, who, answer, sub)).unwrap();
            }
        }
    }

    #[test]
    fn coverage_counts_and_violations() {
        let mut s = store();
        full_cell(&mut s, "a1");
        full_cell(&mut s, "a2");
        let corpus = [article("a1"), article("a2")];
        let report = validate_coverage(&s, &corpus, PromptVersion::Initial);
        assert!(report.is_complete(), "{:?}", report.violations);
        assert_eq!(report.total, 2 * 6 * 3);

        s.record(ann("a1", CriterionId::Type, "carla", "Satire", None)).unwrap();
        let corpus3 = [article("a1"), article("a2"), article("a3")];
        let report = validate_coverage(&s, &corpus3, PromptVersion::Initial);
        let flagged: BTreeSet<(&str, CriterionId)> = report
            .violations
            .iter()
            .map(|v| (v.article_id.as_str(), v.criterion))
            .collect();
        assert!(flagged.contains(&("a1", CriterionId::Type)));
        assert_eq!(flagged.iter().filter(|(a, _)| *a == "a3").count(), 6);
        assert_eq!(report.violations.len(), 7);
    }

    fn annotator_map() -> BTreeMap<String, Annotator> {
        ["alice", "bob", "carla"]
            .into_iter()
            .map(|n| (n.to_string(), Annotator::new(n, AnnotatorKind::Human)))
            .collect()
    }

    #[test]
    fn import_valid_table() {
        let mut csv = String::from("article_id,criterion,annotator,version,answer,sub_answer\n");
        for article in ["a1", "a2"] {
            for (c, ans, sub) in [
                ("HeadAcc", "Accurate", ""),
                ("LedePres", "No", ""),
                ("NegTarg", "Yes", "Religion"),
            ] {
                for who in ["alice", "bob"] {
                    csv.push_str(&format!("{article},{c},{who},initial,{ans},{sub}\n"));
                }
            }
        }
        let mut s = AnnotationStore::in_memory(Arc::new(Registry::default_registry()));
        let rows = import_table(&mut s, csv.as_bytes(), &annotator_map(), at(), None).unwrap();
        assert_eq!(rows.len(), 12);
        assert_eq!(s.annotations().len(), 12);
    }

    #[test]
    fn import_rejects_bad_rows_atomically() {
        let csv = "article_id,criterion,annotator,version,answer,sub_answer\n\
                   a1,LedePres,alice,initial,Yes,\n\
                   a1,LedePres,bob,initial,Maybe,\n";
        let mut s = AnnotationStore::in_memory(Arc::new(Registry::default_registry()));
        match import_table(&mut s, csv.as_bytes(), &annotator_map(), at(), None) {
            Err(AnnotationError::RowInvalid { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(s.annotations().is_empty());

        let csv = "article_id,criterion,annotator,version,answer,sub_answer\n\
                   a1,LedePres,alice,initial,Yes,\n\
                   a1,LedePres,alice,initial,Yes,\n";
        match import_table(&mut s, csv.as_bytes(), &annotator_map(), at(), None) {
            Err(AnnotationError::RowInvalid { row, cause }) => {
                assert_eq!(row, 3);
                assert!(cause.starts_with("DUPLICATE"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(s.annotations().is_empty());
    }

    #[test]
    fn journal_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let registry = Arc::new(Registry::default_registry());
        {
            let mut s = AnnotationStore::open(dir.path(), Arc::clone(&registry)).unwrap();
            s.register_annotator(Annotator::new("alice", AnnotatorKind::Human)).unwrap();
            s.record(ann("a1", CriterionId::NegTarg, "alice", "Yes", Some("Other"))).unwrap();
        }
        let s = AnnotationStore::open(dir.path(), registry).unwrap();
        assert_eq!(s.annotations().len(), 1);
        assert_eq!(s.annotations()[0].sub_answer.as_ref().unwrap().as_str(), "Other");
        assert!(s.annotator("alice").is_some());
    }
}
