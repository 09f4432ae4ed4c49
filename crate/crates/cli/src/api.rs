//! JSON API backing the annotation and adjudication workbench.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::RwLock;

use veritas_core::adjudication::{self, AdjudicationError};
use veritas_core::agreement::{self, AgreementError, ViewOptions};
use veritas_core::annotations::{Annotation, AnnotationError, AnnotationStore, AnnotatorKind};
use veritas_core::corpus::Article;
use veritas_core::criteria::{render_question, AnswerValue, Aspect, CriterionId, PromptVersion};
use veritas_core::pipeline::REPORT_ASPECTS;

pub struct AppState {
    /// All writes go through this lock, one at a time.
    pub store: RwLock<AnnotationStore>,
    /// Only sanitized articles are ever served.
    pub corpus: Vec<Article>,
    pub options: ViewOptions,
    pub clock: Box<dyn Fn() -> DateTime<Utc> + Send + Sync>,
}

impl AppState {
    pub fn new(store: AnnotationStore, corpus: Vec<Article>) -> AppState {
        AppState {
            store: RwLock::new(store),
            corpus: corpus.into_iter().filter(|a| a.sanitized).collect(),
            options: ViewOptions::default(),
            clock: Box::new(Utc::now),
        }
    }

    fn article(&self, id: &str) -> Option<&Article> {
        self.corpus.iter().find(|a| a.id == id)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/articles", get(list_articles))
        .route("/articles/{id}", get(get_article))
        .route("/annotations", get(list_annotations).post(post_annotation))
        .route("/agreement", get(get_agreement))
        .route("/adjudication/queue", get(adjudication_queue))
        .route("/adjudication/{case_id}", post(post_adjudication))
        .route("/summary/table5", get(summary_table5))
        .route("/tasks/{annotator_id}/next", get(next_task))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn bad_request(code: &str, message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn not_found(code: &str, message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::NOT_FOUND, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> ApiError {
        let status = match &e {
            AnnotationError::Duplicate(_) => StatusCode::CONFLICT,
            AnnotationError::SchemaViolation(_) | AnnotationError::RowInvalid { .. } => StatusCode::BAD_REQUEST,
            AnnotationError::CoverageIncomplete { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<AdjudicationError> for ApiError {
    fn from(e: AdjudicationError) -> ApiError {
        match e {
            AdjudicationError::Store(inner) => inner.into(),
            other => {
                let status = match &other {
                    AdjudicationError::CaseNotFound(_) => StatusCode::NOT_FOUND,
                    AdjudicationError::NoLlmAnswer(_) => StatusCode::CONFLICT,
                    _ => StatusCode::BAD_REQUEST,
                };
                ApiError::new(status, other.code(), other.to_string())
            }
        }
    }
}

impl From<AgreementError> for ApiError {
    fn from(e: AgreementError) -> ApiError {
        let status = match &e {
            AgreementError::NoConsensusCells { .. } | AgreementError::VersionMissing { .. } => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct ArticleSummary {
    pub id: String,
    pub title: String,
    pub published_at: NaiveDate,
}

/// Article as shown to annotators: no publisher, no URL.
#[derive(Debug, Serialize, Deserialize)]
pub struct ArticleView {
    pub id: String,
    pub title: String,
    pub body: String,
    pub published_at: NaiveDate,
}

impl From<&Article> for ArticleView {
    fn from(a: &Article) -> ArticleView {
        ArticleView {
            id: a.id.clone(),
            title: a.title.clone(),
            body: a.body.clone(),
            published_at: a.published_at,
        }
    }
}

async fn list_articles(State(state): State<Arc<AppState>>) -> Json<Vec<ArticleSummary>> {
    Json(
        state
            .corpus
            .iter()
            .map(|a| ArticleSummary {
                id: a.id.clone(),
                title: a.title.clone(),
                published_at: a.published_at,
            })
            .collect(),
    )
}

async fn get_article(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<ArticleView> {
    state
        .article(&id)
        .map(|a| Json(ArticleView::from(a)))
        .ok_or_else(|| ApiError::not_found("ARTICLE_NOT_FOUND", format!("no article '{id}'")))
}

fn parse_criterion(s: &str) -> Result<CriterionId, ApiError> {
    s.parse().map_err(|e: veritas_core::criteria::CriteriaError| ApiError::bad_request("INVALID_CRITERION", e.to_string()))
}

fn parse_version(s: Option<&str>) -> Result<PromptVersion, ApiError> {
    match s {
        None => Ok(PromptVersion::Initial),
        Some(v) => v
            .parse()
            .map_err(|e: veritas_core::criteria::CriteriaError| ApiError::bad_request("INVALID_VERSION", e.to_string())),
    }
}

#[derive(Debug, Deserialize)]
pub struct AnnotationQuery {
    pub article: Option<String>,
    pub criterion: Option<String>,
}

async fn list_annotations(
    State(state): State<Arc<AppState>>,
    Query(q): Query<AnnotationQuery>,
) -> ApiResult<Vec<Annotation>> {
    let criterion = q.criterion.as_deref().map(parse_criterion).transpose()?;
    let store = state.store.read().await;
    Ok(Json(
        store
            .annotations()
            .iter()
            .filter(|a| q.article.as_ref().is_none_or(|id| &a.article_id == id))
            .filter(|a| criterion.is_none_or(|c| a.criterion_id == c))
            .cloned()
            .collect(),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NewAnnotation {
    pub article_id: String,
    pub criterion: String,
    pub annotator_id: String,
    #[serde(default)]
    pub version: Option<String>,
    pub answer: String,
    #[serde(default)]
    pub sub_answer: Option<String>,
}

async fn post_annotation(
    State(state): State<Arc<AppState>>,
    Json(body): Json<NewAnnotation>,
) -> Result<(StatusCode, Json<Annotation>), ApiError> {
    let criterion = parse_criterion(&body.criterion)?;
    let version = parse_version(body.version.as_deref())?;
    if state.article(&body.article_id).is_none() {
        return Err(ApiError::not_found("ARTICLE_NOT_FOUND", format!("no article '{}'", body.article_id)));
    }
    let mut store = state.store.write().await;
    match store.annotator(&body.annotator_id).map(|a| a.kind) {
        None => {
            return Err(ApiError::not_found(
                "ANNOTATOR_NOT_FOUND",
                format!("no annotator '{}'", body.annotator_id),
            ))
        }
        Some(AnnotatorKind::Adjudicator) => {
            return Err(ApiError::bad_request(
                "SCHEMA_VIOLATION",
                "adjudicators record ground truth through /adjudication",
            ))
        }
        Some(_) => {}
    }
    let annotation = Annotation {
        article_id: body.article_id,
        criterion_id: criterion,
        annotator_id: body.annotator_id,
        prompt_version: version,
        answer: Some(AnswerValue::new(body.answer)),
        sub_answer: body.sub_answer.filter(|s| !s.is_empty()).map(AnswerValue::new),
        evidence: None,
        created_at: (state.clock)(),
    };
    store.record(annotation.clone())?;
    Ok((StatusCode::CREATED, Json(annotation)))
}

#[derive(Debug, Deserialize)]
pub struct AgreementQuery {
    pub criterion: Option<String>,
    pub version: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AgreementPayload {
    pub aspect: Aspect,
    pub criterion: String,
    pub version: PromptVersion,
    pub report: Option<agreement::AgreementReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

async fn get_agreement(State(state): State<Arc<AppState>>, Query(q): Query<AgreementQuery>) -> Result<Json<Value>, ApiError> {
    let version = parse_version(q.version.as_deref())?;
    let store = state.store.read().await;
    if let Some(name) = &q.criterion {
        let aspect: Aspect = name
            .parse()
            .map_err(|e: veritas_core::criteria::CriteriaError| ApiError::bad_request("INVALID_CRITERION", e.to_string()))?;
        let report = agreement::consensus_vs_llm(&store, aspect, version, state.options)?;
        return Ok(Json(serde_json::to_value(AgreementPayload {
            aspect,
            criterion: aspect.display_name().to_string(),
            version,
            report: Some(report),
            error: None,
        })
        .expect("serializable")));
    }
    let all: Vec<AgreementPayload> = REPORT_ASPECTS
        .into_iter()
        .map(|aspect| {
            let (report, error) = match agreement::consensus_vs_llm(&store, aspect, version, state.options) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            AgreementPayload {
                aspect,
                criterion: aspect.display_name().to_string(),
                version,
                report,
                error,
            }
        })
        .collect();
    Ok(Json(serde_json::to_value(all).expect("serializable")))
}

async fn adjudication_queue(State(state): State<Arc<AppState>>) -> Json<Vec<adjudication::QueueItem>> {
    let store = state.store.read().await;
    Json(adjudication::adjudication_queue(&store, &state.corpus))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AdjudicationBody {
    pub adjudicator_id: String,
    /// `null` records an indeterminate verdict.
    #[serde(default)]
    pub ground_truth: Option<String>,
}

async fn post_adjudication(
    State(state): State<Arc<AppState>>,
    Path(case_id): Path<String>,
    Json(body): Json<AdjudicationBody>,
) -> ApiResult<adjudication::DisagreementCase> {
    let mut store = state.store.write().await;
    match store.annotator(&body.adjudicator_id).map(|a| a.kind) {
        Some(AnnotatorKind::Adjudicator) => {}
        Some(_) => {
            return Err(ApiError::bad_request(
                "SCHEMA_VIOLATION",
                format!("'{}' is not an adjudicator", body.adjudicator_id),
            ))
        }
        None => {
            return Err(ApiError::not_found(
                "ANNOTATOR_NOT_FOUND",
                format!("no adjudicator '{}'", body.adjudicator_id),
            ))
        }
    }
    let case = adjudication::record_adjudication(
        &mut store,
        &case_id,
        &body.adjudicator_id,
        body.ground_truth.filter(|g| !g.is_empty()).map(AnswerValue::new),
        (state.clock)(),
    )?;
    Ok(Json(case))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Table5Payload {
    pub rows: Vec<adjudication::SummaryRow>,
    pub resolution_rates: BTreeMap<String, Option<f64>>,
    pub articles_with_disagreement: usize,
    pub text: String,
}

async fn summary_table5(State(state): State<Arc<AppState>>) -> Json<Table5Payload> {
    let store = state.store.read().await;
    let rows = adjudication::summary_table(&store, state.corpus.len());
    let resolution_rates = rows
        .iter()
        .map(|r| (r.criterion_aspect.clone(), adjudication::resolution_rate(r).ok()))
        .collect();
    Json(Table5Payload {
        text: adjudication::render_summary(&rows),
        articles_with_disagreement: adjudication::articles_with_any_disagreement(&store).len(),
        resolution_rates,
        rows,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OptionView {
    pub value: String,
    pub label: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TaskView {
    pub annotator_id: String,
    pub article: ArticleView,
    pub criterion: CriterionId,
    pub version: PromptVersion,
    pub question: String,
    pub options: Vec<OptionView>,
    /// Issue options, shown once the affirmative answer is chosen.
    pub sub_options: Vec<OptionView>,
    pub sub_options_after: Option<String>,
    pub progress: Progress,
}

#[derive(Debug, Deserialize)]
pub struct TaskQuery {
    pub lang: Option<String>,
}

/// Human annotators assigned to the article at `index`: pairs of the sorted
/// human annotator list, handed out round-robin.
pub fn assigned_pair(humans: &[String], index: usize) -> Option<[&str; 2]> {
    let n = humans.len();
    if n < 2 {
        return None;
    }
    // Neighbouring pairs first, so three annotators rotate (a,b), (b,c), (a,c).
    let mut pairs: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    for gap in 2..n {
        pairs.extend((0..n - gap).map(|i| (i, i + gap)));
    }
    let (i, j) = pairs[index % pairs.len()];
    Some([humans[i].as_str(), humans[j].as_str()])
}

async fn next_task(
    State(state): State<Arc<AppState>>,
    Path(annotator_id): Path<String>,
    Query(q): Query<TaskQuery>,
) -> ApiResult<TaskView> {
    let store = state.store.read().await;
    match store.annotator(&annotator_id).map(|a| a.kind) {
        Some(AnnotatorKind::Human) => {}
        _ => {
            return Err(ApiError::not_found(
                "ANNOTATOR_NOT_FOUND",
                format!("no human annotator '{annotator_id}'"),
            ))
        }
    }
    let humans: Vec<String> = store
        .annotators()
        .filter(|a| a.kind == AnnotatorKind::Human)
        .map(|a| a.id.clone())
        .collect();
    let lang = q.lang.unwrap_or_else(|| "it".into());
    let version = PromptVersion::Initial;
    let mut total = 0;
    let mut done = 0;
    let mut next: Option<(&Article, CriterionId)> = None;
    for (index, article) in state.corpus.iter().enumerate() {
        let Some(pair) = assigned_pair(&humans, index) else { continue };
        if !pair.contains(&annotator_id.as_str()) {
            continue;
        }
        let answered: BTreeSet<CriterionId> = CriterionId::ALL
            .into_iter()
            .filter(|&c| {
                store
                    .cell(&article.id, c)
                    .iter()
                    .any(|a| a.annotator_id == annotator_id && a.prompt_version == version)
            })
            .collect();
        total += CriterionId::ALL.len();
        done += answered.len();
        if next.is_none() {
            next = CriterionId::ALL
                .into_iter()
                .find(|c| !answered.contains(c))
                .map(|c| (article, c));
        }
    }
    let Some((article, criterion)) = next else {
        return Err(ApiError::not_found("QUEUE_EMPTY", format!("no open task for '{annotator_id}'")));
    };
    let c = store.registry().get(criterion);
    let question = render_question(c, version, &lang)
        .map_err(|e| ApiError::bad_request("LANGUAGE_MISSING", e.to_string()))?;
    let schema = c.schema(version);
    let view = |o: &veritas_core::criteria::AnswerOption| OptionView {
        value: o.label.clone(),
        label: o.display_label(&lang).to_string(),
    };
    Ok(Json(TaskView {
        annotator_id,
        article: ArticleView::from(article),
        criterion,
        version,
        question,
        options: schema.options.iter().map(view).collect(),
        sub_options: schema
            .sub_schema
            .as_deref()
            .map(|s| s.options.iter().map(view).collect())
            .unwrap_or_default(),
        sub_options_after: schema.sub_schema.as_ref().and(schema.affirmative()).map(|a| a.as_str().to_string()),
        progress: Progress { done, total },
    }))
}
