//! Human-human disagreement cases, their adjudication and the summary table.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{
    human_labels, llm_label, AdjudicationRecord, AnnotationError, AnnotationStore, HumanSource,
    LlmLabel, LlmSource,
};
use crate::corpus::Article;
use crate::criteria::{is_relevant_disagreement, AnswerValue, Aspect, PromptVersion, SchemaKind};

/// Human labels and LLM answers compared here are those of the initial prompts.
pub const ADJUDICATION_VERSION: PromptVersion = PromptVersion::Initial;

#[derive(Debug, Error)]
pub enum AdjudicationError {
    #[error("CASE_NOT_FOUND: {0}")]
    CaseNotFound(String),
    #[error("NO_LLM_ANSWER: case {0} has no final LLM answer")]
    NoLlmAnswer(String),
    #[error("SCHEMA_MISMATCH: {0}")]
    SchemaMismatch(String),
    #[error("INVALID_GROUND_TRUTH: '{value}' is not a label of {aspect}")]
    InvalidGroundTruth { aspect: Aspect, value: String },
    #[error("NO_NONBORDERLINE_CASES: {0} has no relevant case outside the borderline ones")]
    NoNonborderlineCases(String),
    #[error(transparent)]
    Store(#[from] AnnotationError),
}

impl AdjudicationError {
    pub fn code(&self) -> &'static str {
        match self {
            AdjudicationError::CaseNotFound(_) => "CASE_NOT_FOUND",
            AdjudicationError::NoLlmAnswer(_) => "NO_LLM_ANSWER",
            AdjudicationError::SchemaMismatch(_) => "SCHEMA_MISMATCH",
            AdjudicationError::InvalidGroundTruth { .. } => "INVALID_GROUND_TRUTH",
            AdjudicationError::NoNonborderlineCases(_) => "NO_NONBORDERLINE_CASES",
            AdjudicationError::Store(e) => e.code(),
        }
    }
}

pub type Result<T, E = AdjudicationError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Unresolved,
    ResolvedCorrect,
    ResolvedIncorrect,
    Borderline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisagreementCase {
    pub case_id: String,
    pub aspect: Aspect,
    pub article_id: String,
    pub annotators: [String; 2],
    pub human_answers: [AnswerValue; 2],
    pub relevant: bool,
    pub llm_answer: Option<AnswerValue>,
    pub ground_truth: Option<AnswerValue>,
    pub outcome: Outcome,
}

pub fn case_id(aspect: Aspect, article_id: &str) -> String {
    format!("{}:{article_id}", aspect.as_str())
}

pub fn parse_case_id(id: &str) -> Option<(Aspect, &str)> {
    let (aspect, article) = id.split_once(':')?;
    let aspect = Aspect::ALL.into_iter().find(|a| a.as_str() == aspect)?;
    (!article.is_empty()).then_some((aspect, article))
}

fn outcome_of(llm: Option<&AnswerValue>, record: Option<&AdjudicationRecord>) -> (Option<AnswerValue>, Outcome) {
    match record {
        None => (None, Outcome::Unresolved),
        Some(r) => match (&r.ground_truth, llm) {
            (None, _) => (None, Outcome::Borderline),
            (Some(gt), Some(llm)) if gt == llm => (Some(gt.clone()), Outcome::ResolvedCorrect),
            (Some(gt), Some(_)) => (Some(gt.clone()), Outcome::ResolvedIncorrect),
            (Some(gt), None) => (Some(gt.clone()), Outcome::Unresolved),
        },
    }
}

fn case_for(store: &AnnotationStore, aspect: Aspect, article_id: &str) -> Option<DisagreementCase> {
    let labels = human_labels(store, article_id, aspect, ADJUDICATION_VERSION, HumanSource::Remap);
    let [a, b] = labels.as_slice() else {
        return None;
    };
    if a.label == b.label {
        return None;
    }
    if aspect == Aspect::NegTargIdentification {
        let detection = human_labels(
            store,
            article_id,
            Aspect::NegTargDetection,
            ADJUDICATION_VERSION,
            HumanSource::Remap,
        );
        let yes = store
            .registry()
            .get(aspect.criterion())
            .schema(ADJUDICATION_VERSION)
            .affirmative();
        if !detection.iter().any(|d| Some(&d.label) == yes.as_ref()) {
            return None;
        }
    }
    let schema = aspect.schema(store.registry(), ADJUDICATION_VERSION);
    let llm_answer = match llm_label(store, article_id, aspect, ADJUDICATION_VERSION, LlmSource::Runs) {
        LlmLabel::Final(v) => Some(v),
        _ => None,
    };
    let id = case_id(aspect, article_id);
    let (ground_truth, outcome) = outcome_of(llm_answer.as_ref(), store.latest_adjudication(&id));
    Some(DisagreementCase {
        relevant: is_relevant_disagreement(&a.label, &b.label, &schema),
        case_id: id,
        aspect,
        article_id: article_id.to_string(),
        annotators: [a.annotator_id.clone(), b.annotator_id.clone()],
        human_answers: [a.label.clone(), b.label.clone()],
        llm_answer,
        ground_truth,
        outcome,
    })
}

/// One case per article whose two human labels differ on `aspect`, ordered
/// by article id.
pub fn find_disagreements(store: &AnnotationStore, aspect: Aspect) -> Vec<DisagreementCase> {
    let articles = store.articles_for(aspect.criterion());
    articles
        .into_iter()
        .filter_map(|article| case_for(store, aspect, article))
        .collect()
}

pub fn find_case(store: &AnnotationStore, id: &str) -> Result<DisagreementCase> {
    let (aspect, article) = parse_case_id(id).ok_or_else(|| AdjudicationError::CaseNotFound(id.to_string()))?;
    case_for(store, aspect, article).ok_or_else(|| AdjudicationError::CaseNotFound(id.to_string()))
}

/// Records an adjudicator's ground truth; `None` means indeterminate.
pub fn record_adjudication(
    store: &mut AnnotationStore,
    id: &str,
    adjudicator_id: &str,
    ground_truth: Option<AnswerValue>,
    created_at: DateTime<Utc>,
) -> Result<DisagreementCase> {
    let case = find_case(store, id)?;
    if let Some(gt) = &ground_truth {
        let schema = case.aspect.schema(store.registry(), ADJUDICATION_VERSION);
        if !schema.contains(gt) {
            return Err(AdjudicationError::InvalidGroundTruth {
                aspect: case.aspect,
                value: gt.to_string(),
            });
        }
        if case.llm_answer.is_none() {
            return Err(AdjudicationError::NoLlmAnswer(case.case_id));
        }
    }
    store.append_adjudication(AdjudicationRecord {
        case_id: case.case_id.clone(),
        article_id: case.article_id.clone(),
        aspect: case.aspect,
        adjudicator_id: adjudicator_id.to_string(),
        ground_truth,
        created_at,
    })?;
    find_case(store, id)
}

/// Whether the LLM picked the central evaluation between the two experts:
/// strictly between their ranks, or either of them when they are adjacent.
pub fn centrality_check(store: &AnnotationStore, case: &DisagreementCase) -> Result<bool> {
    let schema = case.aspect.schema(store.registry(), ADJUDICATION_VERSION);
    if schema.kind != SchemaKind::Ordinal4 {
        return Err(AdjudicationError::SchemaMismatch(format!(
            "{} is not a four-level scale",
            case.aspect
        )));
    }
    let llm = case
        .llm_answer
        .as_ref()
        .ok_or_else(|| AdjudicationError::NoLlmAnswer(case.case_id.clone()))?;
    let rank = |v: &AnswerValue| {
        schema
            .rank_of(v)
            .ok_or_else(|| AdjudicationError::SchemaMismatch(format!("'{v}' is not on the {} scale", case.aspect)))
    };
    let (a, b, r) = (rank(&case.human_answers[0])?, rank(&case.human_answers[1])?, rank(llm)?);
    let (lo, hi) = (a.min(b), a.max(b));
    Ok(if hi - lo == 1 { r == lo || r == hi } else { lo < r && r < hi })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub aspect: Aspect,
    pub criterion_aspect: String,
    pub no_articles: usize,
    pub no_disagreements: usize,
    pub relevant_disagreements: usize,
    pub llm_correct: usize,
    pub borderline: usize,
    /// Relevant cases adjudicated against the LLM.
    pub llm_incorrect: usize,
    /// Relevant cases with no adjudication yet; never counted as borderline.
    pub unresolved: usize,
}

pub fn summarize(aspect: Aspect, cases: &[DisagreementCase], no_articles: usize) -> SummaryRow {
    let relevant: Vec<&DisagreementCase> = cases.iter().filter(|c| c.relevant).collect();
    let count = |o: Outcome| relevant.iter().filter(|c| c.outcome == o).count();
    SummaryRow {
        aspect,
        criterion_aspect: aspect.display_name().to_string(),
        no_articles,
        no_disagreements: cases.len(),
        relevant_disagreements: relevant.len(),
        llm_correct: count(Outcome::ResolvedCorrect),
        borderline: count(Outcome::Borderline),
        llm_incorrect: count(Outcome::ResolvedIncorrect),
        unresolved: count(Outcome::Unresolved),
    }
}

/// Summary rows for every aspect of the disagreement table.
pub fn summary_table(store: &AnnotationStore, no_articles: usize) -> Vec<SummaryRow> {
    Aspect::DISAGREEMENT_TABLE
        .into_iter()
        .map(|aspect| summarize(aspect, &find_disagreements(store, aspect), no_articles))
        .collect()
}

/// Share of decidable relevant cases the LLM resolved correctly.
pub fn resolution_rate(row: &SummaryRow) -> Result<f64> {
    let decidable = row.relevant_disagreements.saturating_sub(row.borderline);
    if decidable == 0 {
        return Err(AdjudicationError::NoNonborderlineCases(row.criterion_aspect.clone()));
    }
    Ok(row.llm_correct as f64 / decidable as f64)
}

/// Articles with a human-human disagreement on at least one aspect.
pub fn articles_with_any_disagreement(store: &AnnotationStore) -> BTreeSet<String> {
    Aspect::ALL
        .into_iter()
        .flat_map(|aspect| find_disagreements(store, aspect))
        .map(|c| c.article_id)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueArticle {
    pub id: String,
    pub title: String,
    pub body: String,
}

/// An open case as shown to an adjudicator. The LLM answer is withheld.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueItem {
    pub case_id: String,
    pub aspect: Aspect,
    pub criterion: String,
    pub article_id: String,
    pub human_answers: [AnswerValue; 2],
    pub options: Vec<AnswerValue>,
    pub article: Option<QueueArticle>,
}

/// Open relevant cases of the disagreement-table aspects, with sanitized
/// article text inline when the corpus has it.
pub fn adjudication_queue(store: &AnnotationStore, corpus: &[Article]) -> Vec<QueueItem> {
    Aspect::DISAGREEMENT_TABLE
        .into_iter()
        .flat_map(|aspect| find_disagreements(store, aspect))
        .filter(|c| c.relevant && c.outcome == Outcome::Unresolved && c.ground_truth.is_none())
        .map(|c| {
            let article = corpus
                .iter()
                .find(|a| a.id == c.article_id && a.sanitized)
                .map(|a| QueueArticle {
                    id: a.id.clone(),
                    title: a.title.clone(),
                    body: a.body.clone(),
                });
            QueueItem {
                options: c.aspect.schema(store.registry(), ADJUDICATION_VERSION).labels(),
                criterion: c.aspect.display_name().to_string(),
                case_id: c.case_id,
                aspect: c.aspect,
                article_id: c.article_id,
                human_answers: c.human_answers,
                article,
            }
        })
        .collect()
}

pub fn render_summary(rows: &[SummaryRow]) -> String {
    let header = [
        "Criterion",
        "No. Articles",
        "No. Disagreements",
        "Relevant",
        "LLM Correct",
        "Borderline",
    ];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.criterion_aspect.clone(),
                r.no_articles.to_string(),
                r.no_disagreements.to_string(),
                r.relevant_disagreements.to_string(),
                r.llm_correct.to_string(),
                r.borderline.to_string(),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..6)
        .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let mut out = format!("{:<w$}", cells[0], w = widths[0]);
        for i in 1..6 {
            out.push_str(&format!("  {:>w$}", cells[i], w = widths[i]));
        }
        out.push('\n');
        out
    };
    let mut out = line(&header.map(str::to_string));
    out.push_str(&format!("{}\n", "-".repeat(widths.iter().sum::<usize>() + 10)));
    for row in &body {
        out.push_str(&line(row));
    }
    out
}
