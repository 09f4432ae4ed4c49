use std::collections::BTreeMap;
use std::time::Duration;

use chrono::{DateTime, Utc};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use url::Url;

use super::{ingest_article, Article, IngestMeta, SourceRegistry};

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub user_agent: String,
    /// Pause between two requests to the same host.
    pub per_host_delay: Duration,
    /// Hosts fetched at the same time.
    pub concurrency: usize,
    pub request_timeout: Duration,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions {
            user_agent: concat!("veritas/", env!("CARGO_PKG_VERSION")).to_string(),
            per_host_delay: Duration::from_secs(1),
            concurrency: 4,
            request_timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchFailure {
    pub publisher_id: String,
    pub url: String,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct FetchOutcome {
    /// Sorted by (publisher_id, url).
    pub articles: Vec<Article>,
    pub failures: Vec<FetchFailure>,
}

struct Job {
    publisher_id: String,
    url: Url,
    published_at: Option<chrono::NaiveDate>,
}

/// Downloads and extracts every article listed in the registry.
///
/// Requests to one host run sequentially with `per_host_delay` between them;
/// up to `concurrency` hosts are worked on at once. Individual failures are
/// collected rather than aborting the run.
pub async fn fetch_corpus(
    registry: &SourceRegistry,
    options: &FetchOptions,
    clock: impl Fn() -> DateTime<Utc> + Sync,
) -> FetchOutcome {
    let client = match reqwest::Client::builder()
        .user_agent(&options.user_agent)
        .timeout(options.request_timeout)
        .build()
    {
        Ok(c) => c,
        Err(e) => {
            let reason = e.to_string();
            let failures = registry
                .0
                .iter()
                .flat_map(|(id, entry)| {
                    let reason = reason.clone();
                    entry.articles.iter().map(move |a| FetchFailure {
                        publisher_id: id.clone(),
                        url: a.url.to_string(),
                        reason: reason.clone(),
                    })
                })
                .collect();
            return FetchOutcome {
                articles: Vec::new(),
                failures,
            };
        }
    };

    let mut by_host: BTreeMap<String, Vec<Job>> = BTreeMap::new();
    for (publisher_id, entry) in &registry.0 {
        for item in &entry.articles {
            let host = item.url.host_str().unwrap_or_default().to_string();
            by_host.entry(host).or_default().push(Job {
                publisher_id: publisher_id.clone(),
                url: item.url.clone(),
                published_at: item.published_at,
            });
        }
    }

    let client = &client;
    let clock = &clock;
    let results: Vec<Vec<Result<Article, FetchFailure>>> = stream::iter(by_host.into_values())
        .map(|jobs| async move {
            let mut out = Vec::with_capacity(jobs.len());
            for (i, job) in jobs.into_iter().enumerate() {
                if i > 0 && !options.per_host_delay.is_zero() {
                    tokio::time::sleep(options.per_host_delay).await;
                }
                out.push(fetch_one(client, registry, &job, clock()).await);
            }
            out
        })
        .buffer_unordered(options.concurrency.max(1))
        .collect()
        .await;

    let mut outcome = FetchOutcome::default();
    for result in results.into_iter().flatten() {
        match result {
            Ok(article) => outcome.articles.push(article),
            Err(failure) => outcome.failures.push(failure),
        }
    }
    outcome
        .articles
        .sort_by(|a, b| (&a.publisher_id, a.url.as_str()).cmp(&(&b.publisher_id, b.url.as_str())));
    outcome
        .failures
        .sort_by(|a, b| (&a.publisher_id, &a.url).cmp(&(&b.publisher_id, &b.url)));
    outcome
}

async fn fetch_one(
    client: &reqwest::Client,
    registry: &SourceRegistry,
    job: &Job,
    now: DateTime<Utc>,
) -> Result<Article, FetchFailure> {
    let fail = |reason: String| FetchFailure {
        publisher_id: job.publisher_id.clone(),
        url: job.url.to_string(),
        reason,
    };
    let response = client
        .get(job.url.clone())
        .send()
        .await
        .map_err(|e| fail(e.to_string()))?;
    if !response.status().is_success() {
        return Err(fail(format!("HTTP {}", response.status())));
    }
    let html = response.text().await.map_err(|e| fail(e.to_string()))?;
    let rule = registry
        .rule(&job.publisher_id)
        .ok_or_else(|| fail("no extraction rule".into()))?;
    ingest_article(
        &html,
        &rule,
        &job.url,
        &job.publisher_id,
        IngestMeta {
            published_at: job.published_at,
            fetched_at: now,
        },
    )
    .map_err(|e| fail(e.to_string()))
}
