use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;
use tokio::time::Instant;

use super::{BackendConfig, LlmBackend, LlmError, LlmRequest, RequestKey};
use crate::annotations::Annotation;
use crate::criteria::{CriterionId, PromptVersion};
use crate::jsonl;

/// Fixture key. `article_id` may also be `sha256:<hex>` of the article body;
/// a missing `repetition` applies to all three calls.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FixtureKey {
    pub article_id: String,
    pub criterion: CriterionId,
    pub version: PromptVersion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetition: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub key: FixtureKey,
    pub response: String,
}

pub fn read_fixture(path: &Path) -> std::io::Result<Vec<FixtureEntry>> {
    jsonl::read_all(path)
}

pub fn write_fixture(path: &Path, entries: &[FixtureEntry]) -> std::io::Result<()> {
    jsonl::write_all(path, entries)
}

/// Turns stored LLM evidence back into a per-repetition replay fixture.
pub fn fixture_from_annotations<'a>(
    annotations: impl IntoIterator<Item = &'a Annotation>,
) -> Vec<FixtureEntry> {
    let mut entries: Vec<FixtureEntry> = annotations
        .into_iter()
        .filter_map(|a| a.evidence.as_ref().map(|e| (a, e)))
        .flat_map(|(a, evidence)| {
            evidence
                .repetitions
                .iter()
                .enumerate()
                .map(move |(i, response)| FixtureEntry {
                    key: FixtureKey {
                        article_id: a.article_id.clone(),
                        criterion: a.criterion_id,
                        version: a.prompt_version,
                        repetition: Some(i as u32 + 1),
                    },
                    response: response.clone(),
                })
        })
        .collect();
    entries.sort_by(|a, b| a.key.cmp(&b.key));
    entries
}

/// Deterministic fixture-backed backend; also serves as the replay backend.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    responses: HashMap<FixtureKey, String>,
    strict: bool,
    default_response: Option<String>,
}

impl MockBackend {
    /// Unmatched keys get `default_response`, or `FIXTURE_MISS` when `None`.
    pub fn new(entries: Vec<FixtureEntry>, default_response: Option<String>) -> MockBackend {
        MockBackend {
            responses: entries.into_iter().map(|e| (e.key, e.response)).collect(),
            strict: default_response.is_none(),
            default_response,
        }
    }

    /// Every call must have been recorded with its exact repetition number.
    pub fn replay(entries: Vec<FixtureEntry>) -> MockBackend {
        MockBackend {
            responses: entries.into_iter().map(|e| (e.key, e.response)).collect(),
            strict: true,
            default_response: None,
        }
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    fn lookup(&self, key: &RequestKey) -> Option<&String> {
        let ids = [key.article_id.clone(), format!("sha256:{}", key.content_hash)];
        for id in &ids {
            for repetition in [Some(key.repetition), None] {
                let probe = FixtureKey {
                    article_id: id.clone(),
                    criterion: key.criterion,
                    version: key.version,
                    repetition,
                };
                if let Some(response) = self.responses.get(&probe) {
                    return Some(response);
                }
            }
        }
        None
    }
}

#[async_trait]
impl LlmBackend for MockBackend {
    async fn complete(&self, _request: &LlmRequest, key: &RequestKey) -> Result<String, LlmError> {
        match (self.lookup(key), &self.default_response) {
            (Some(response), _) => Ok(response.clone()),
            (None, Some(default)) => Ok(default.clone()),
            (None, None) => Err(LlmError::FixtureMiss(key.to_string())),
        }
    }
}

/// Chat-completions client with request pacing and exponential backoff.
pub struct HttpBackend {
    client: reqwest::Client,
    config: BackendConfig,
    api_key: Option<String>,
    next_slot: Mutex<Instant>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<HttpBackend, LlmError> {
        let client = reqwest::Client::builder()
            .timeout(config.request_timeout())
            .build()
            .map_err(|e| LlmError::Backend(e.to_string()))?;
        let api_key = std::env::var(&config.auth).ok().filter(|k| !k.is_empty());
        Ok(HttpBackend {
            client,
            config,
            api_key,
            next_slot: Mutex::new(Instant::now()),
        })
    }

    /// Request body sent for `request`.
    pub fn body(&self, request: &LlmRequest) -> Value {
        let mut body = json!({
            "model": self.config.model_id,
            "temperature": self.config.temperature,
            "frequency_penalty": self.config.frequency_penalty,
            "presence_penalty": self.config.presence_penalty,
            "messages": [
                { "role": "system", "content": request.persona_instruction },
                { "role": "user", "content": request.user_message() },
            ],
        });
        if let Some(stop) = &self.config.stop_sequences {
            body["stop"] = json!(stop);
        }
        if let Some(max) = self.config.max_output_tokens {
            body["max_tokens"] = json!(max);
        }
        body
    }

    async fn pace(&self) {
        if self.config.rate_limit == 0 {
            return;
        }
        let interval = Duration::from_secs_f64(60.0 / f64::from(self.config.rate_limit));
        let wait_until = {
            let mut slot = self.next_slot.lock().await;
            let start = (*slot).max(Instant::now());
            *slot = start + interval;
            start
        };
        tokio::time::sleep_until(wait_until).await;
    }

    async fn attempt(&self, body: &Value) -> Result<String, (bool, String)> {
        self.pace().await;
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let response = req.send().await.map_err(|e| (true, e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            let text = response.text().await.unwrap_or_default();
            return Err((retryable, format!("HTTP {status}: {text}")));
        }
        let payload: Value = response.json().await.map_err(|e| (true, e.to_string()))?;
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| (false, "response has no choices[0].message.content".to_string()))
    }
}

#[async_trait]
impl LlmBackend for HttpBackend {
    async fn complete(&self, request: &LlmRequest, key: &RequestKey) -> Result<String, LlmError> {
        let body = self.body(request);
        let mut attempt = 0;
        loop {
            match self.attempt(&body).await {
                Ok(text) => return Ok(text),
                Err((retryable, reason)) => {
                    if !retryable || attempt >= self.config.max_retries {
                        return Err(LlmError::Backend(format!(
                            "{key}: {reason} (after {} attempts)",
                            attempt + 1
                        )));
                    }
                    let delay = self.config.retry_base_delay_ms.saturating_mul(1 << attempt.min(10));
                    tracing::warn!(%key, attempt, %reason, "retrying model call");
                    tokio::time::sleep(Duration::from_millis(delay)).await;
                    attempt += 1;
                }
            }
        }
    }
}
