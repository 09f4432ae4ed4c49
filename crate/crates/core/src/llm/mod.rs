//! Language-model annotation: prompt assembly, backends and the
//! three-repetition consistency protocol.

mod backends;
mod parse;

use std::time::Duration;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::Annotation;
use crate::corpus::Article;
use crate::criteria::{render_question, CriteriaError, Criterion, CriterionId, PromptVersion};

pub use backends::{
    fixture_from_annotations, read_fixture, write_fixture, FixtureEntry, FixtureKey, HttpBackend,
    MockBackend,
};
pub use parse::{normalize_tokens, parse_response, ParseError, ParsedAnswer};

/// Number of independent times each question is put to the model.
pub const REPETITIONS: usize = 3;

pub const ENV_ENDPOINT: &str = "VERITAS_LLM_ENDPOINT";
pub const ENV_KEY: &str = "VERITAS_LLM_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("UNSANITIZED_ARTICLE: article {0} has not been sanitized")]
    UnsanitizedArticle(String),
    #[error("INCONSISTENT_RESPONSES: three different answers for {article_id}/{criterion}")]
    InconsistentResponses {
        article_id: String,
        criterion: CriterionId,
        /// The annotation to store anyway, with no final answer.
        annotation: Box<Annotation>,
    },
    #[error("BACKEND_ERROR: {0}")]
    Backend(String),
    #[error("FIXTURE_MISS: no response recorded for {0}")]
    FixtureMiss(String),
    #[error(transparent)]
    Criteria(#[from] CriteriaError),
}

impl LlmError {
    pub fn code(&self) -> &'static str {
        match self {
            LlmError::UnsanitizedArticle(_) => "UNSANITIZED_ARTICLE",
            LlmError::InconsistentResponses { .. } => "INCONSISTENT_RESPONSES",
            LlmError::Backend(_) => "BACKEND_ERROR",
            LlmError::FixtureMiss(_) => "FIXTURE_MISS",
            LlmError::Criteria(_) => "CRITERIA_ERROR",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
    Replay,
}

fn default_model() -> String {
    "gpt-4o".to_string()
}

fn default_endpoint() -> String {
    "https://api.openai.com/v1/chat/completions".to_string()
}

fn default_auth() -> String {
    ENV_KEY.to_string()
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_retries() -> u32 {
    3
}

fn default_rate_limit() -> u32 {
    60
}

fn default_backoff_ms() -> u64 {
    500
}

/// Backend settings. The defaults are the deterministic decoding setup:
/// temperature and both penalties at zero, no stop sequences, no output cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend_kind: BackendKind,
    #[serde(default = "default_model")]
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub frequency_penalty: f64,
    #[serde(default)]
    pub presence_penalty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_sequences: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_auth")]
    pub auth: String,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Requests per minute.
    #[serde(default = "default_rate_limit")]
    pub rate_limit: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_base_delay_ms: u64,
}

impl BackendConfig {
    pub fn new(kind: BackendKind) -> BackendConfig {
        BackendConfig {
            backend_kind: kind,
            model_id: default_model(),
            temperature: 0.0,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
            stop_sequences: None,
            max_output_tokens: None,
            endpoint: default_endpoint(),
            auth: default_auth(),
            request_timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            rate_limit: default_rate_limit(),
            retry_base_delay_ms: default_backoff_ms(),
        }
    }

    /// Applies `VERITAS_LLM_ENDPOINT` when set.
    pub fn with_env(mut self) -> BackendConfig {
        if let Ok(endpoint) = std::env::var(ENV_ENDPOINT) {
            if !endpoint.trim().is_empty() {
                self.endpoint = endpoint;
            }
        }
        self
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs(self.request_timeout_secs)
    }
}

/// One prompt, split into its system and user parts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub persona_instruction: String,
    pub question_block: String,
    pub article_text: String,
    pub language: String,
}

struct PromptText {
    persona: &'static str,
    one_option: &'static str,
    one_issue: &'static str,
    article_open: &'static str,
    article_close: &'static str,
    title: &'static str,
}

fn prompt_text(language: &str) -> PromptText {
    match language {
        "it" => PromptText {
            persona: "Sei un giornalista esperto, con molti anni di esperienza nella verifica \
                      della qualità dell'informazione. Valuta l'articolo che ti viene fornito \
                      rispondendo alla domanda.",
            one_option: "Rispondi con esattamente una delle opzioni elencate.",
            one_issue: "Se rispondi Sì, indica anche esattamente uno dei temi elencati.",
            article_open: "<<<ARTICOLO>>>",
            article_close: "<<<FINE ARTICOLO>>>",
            title: "Titolo",
        },
        _ => PromptText {
            persona: "You are an experienced journalist with many years of experience in \
                      assessing the quality of news. Evaluate the article you are given by \
                      answering the question.",
            one_option: "Answer with exactly one of the listed options.",
            one_issue: "If you answer Yes, also name exactly one of the listed issues.",
            article_open: "<<<ARTICLE>>>",
            article_close: "<<<END ARTICLE>>>",
            title: "Title",
        },
    }
}

impl LlmRequest {
    /// The single user turn: question, answering instruction, then the article.
    pub fn user_message(&self) -> String {
        let text = prompt_text(&self.language);
        format!(
            "{}\n{}\n{}\n{}\n",
            self.question_block.trim_end(),
            text.article_open,
            self.article_text,
            text.article_close
        )
    }
}

/// Assembles the prompt for one (article, criterion, version).
pub fn build_request(
    article: &Article,
    criterion: &Criterion,
    version: PromptVersion,
    language: &str,
) -> Result<LlmRequest, LlmError> {
    if !article.sanitized {
        return Err(LlmError::UnsanitizedArticle(article.id.clone()));
    }
    let text = prompt_text(language);
    let mut question_block = render_question(criterion, version, language)?;
    question_block.push_str(text.one_option);
    question_block.push('\n');
    if criterion.schema(version).sub_schema.is_some() {
        question_block.push_str(text.one_issue);
        question_block.push('\n');
    }
    Ok(LlmRequest {
        persona_instruction: text.persona.to_string(),
        question_block,
        article_text: format!("{}: {}\n\n{}", text.title, article.title, article.body),
        language: language.to_string(),
    })
}

/// Identifies one model call for fixture lookup and recording.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RequestKey {
    pub article_id: String,
    pub content_hash: String,
    pub criterion: CriterionId,
    pub version: PromptVersion,
    /// 1-based.
    pub repetition: u32,
}

impl std::fmt::Display for RequestKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{}/{}#{}",
            self.article_id, self.criterion, self.version, self.repetition
        )
    }
}

#[async_trait]
pub trait LlmBackend: Send + Sync {
    async fn complete(&self, request: &LlmRequest, key: &RequestKey) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Consistency {
    Unanimous,
    Majority,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParsedEntry {
    Ok(ParsedAnswer),
    Error(String),
}

impl ParsedEntry {
    pub fn answer(&self) -> Option<&ParsedAnswer> {
        match self {
            ParsedEntry::Ok(a) => Some(a),
            ParsedEntry::Error(_) => None,
        }
    }
}

/// Raw responses and their interpretation for one LLM annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmAnnotationEvidence {
    pub repetitions: Vec<String>,
    pub parsed: Vec<ParsedEntry>,
    pub consistency: Consistency,
    #[serde(rename = "final", default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<ParsedAnswer>,
}

impl LlmAnnotationEvidence {
    pub fn from_responses(
        responses: Vec<String>,
        schema: &crate::criteria::AnswerSchema,
        language: &str,
    ) -> LlmAnnotationEvidence {
        let parsed: Vec<ParsedEntry> = responses
            .iter()
            .map(|raw| match parse_response(raw, schema, language) {
                Ok(a) => ParsedEntry::Ok(a),
                Err(e) => ParsedEntry::Error(e.to_string()),
            })
            .collect();
        let answers: Vec<Option<ParsedAnswer>> =
            parsed.iter().map(|p| p.answer().cloned()).collect();
        let (consistency, final_answer) = classify(&answers);
        LlmAnnotationEvidence {
            repetitions: responses,
            parsed,
            consistency,
            final_answer,
        }
    }

    /// Re-runs the parser over the stored raw responses.
    pub fn reparse(&self, schema: &crate::criteria::AnswerSchema, language: &str) -> Self {
        LlmAnnotationEvidence::from_responses(self.repetitions.clone(), schema, language)
    }
}

/// Unanimous when all parsed answers agree, majority when exactly two do,
/// inconsistent otherwise. Parse failures never count as agreeing.
pub fn classify(answers: &[Option<ParsedAnswer>]) -> (Consistency, Option<ParsedAnswer>) {
    let parsed: Vec<&ParsedAnswer> = answers.iter().flatten().collect();
    let mut best: Option<(&ParsedAnswer, usize)> = None;
    for candidate in &parsed {
        let count = parsed.iter().filter(|a| *a == candidate).count();
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((candidate, count));
        }
    }
    match best {
        Some((answer, count)) if count == answers.len() && count > 0 => {
            (Consistency::Unanimous, Some(answer.clone()))
        }
        Some((answer, 2)) => (Consistency::Majority, Some(answer.clone())),
        _ => (Consistency::Inconsistent, None),
    }
}

/// Settings shared by all annotations of one run.
#[derive(Debug, Clone)]
pub struct AnnotateContext {
    pub language: String,
    pub annotator_id: String,
    pub created_at: DateTime<Utc>,
}

/// Asks the same question [`REPETITIONS`] times in independent requests and
/// records the modal answer together with all raw responses.
pub async fn annotate_llm(
    article: &Article,
    criterion: &Criterion,
    version: PromptVersion,
    backend: &dyn LlmBackend,
    ctx: &AnnotateContext,
) -> Result<Annotation, LlmError> {
    let request = build_request(article, criterion, version, &ctx.language)?;
    let content_hash = article.content_hash();
    let calls = (1..=REPETITIONS as u32).map(|repetition| {
        let key = RequestKey {
            article_id: article.id.clone(),
            content_hash: content_hash.clone(),
            criterion: criterion.id,
            version,
            repetition,
        };
        let request = &request;
        async move { backend.complete(request, &key).await }
    });
    let responses = futures::future::join_all(calls)
        .await
        .into_iter()
        .collect::<Result<Vec<String>, LlmError>>()?;

    let evidence =
        LlmAnnotationEvidence::from_responses(responses, criterion.schema(version), &ctx.language);
    let annotation = Annotation {
        article_id: article.id.clone(),
        criterion_id: criterion.id,
        annotator_id: ctx.annotator_id.clone(),
        prompt_version: version,
        answer: evidence.final_answer.as_ref().map(|a| a.answer.clone()),
        sub_answer: evidence.final_answer.as_ref().and_then(|a| a.sub_answer.clone()),
        evidence: Some(evidence),
        created_at: ctx.created_at,
    };
    if annotation.answer.is_none() {
        return Err(LlmError::InconsistentResponses {
            article_id: article.id.clone(),
            criterion: criterion.id,
            annotation: Box::new(annotation),
        });
    }
    Ok(annotation)
}
