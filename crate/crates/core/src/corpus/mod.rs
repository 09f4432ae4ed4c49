//! Article corpus: extraction from HTML, anonymization and sampling.

mod fetch;
mod selector;

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use url::Url;

use crate::jsonl;

pub use fetch::{fetch_corpus, FetchFailure, FetchOptions, FetchOutcome};
pub use selector::{node_text, PathSelector, SelectorError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("EXTRACTION_EMPTY: body selector yielded no text for {url}")]
    ExtractionEmpty { url: String },
    #[error("SELECTOR_INVALID: {0}")]
    SelectorInvalid(#[from] SelectorError),
    #[error("INSUFFICIENT_ARTICLES: publisher {publisher} has {have} eligible articles, need {need}")]
    InsufficientArticles {
        publisher: String,
        have: usize,
        need: usize,
    },
    #[error("RULE_MISMATCH: rule for '{rule}' applied to publisher '{publisher}'")]
    RuleMismatch { rule: String, publisher: String },
    #[error("DATE_MISSING: no publication date for {url}")]
    DateMissing { url: String },
    #[error("REDACTION_INVALID: {0}")]
    RedactionInvalid(String),
    #[error("SAMPLING_INVALID: {0}")]
    SamplingInvalid(String),
    #[error("ARTICLE_INVALID: {0}")]
    ArticleInvalid(String),
    #[error("FETCH_FAILED: {url}: {reason}")]
    Fetch { url: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    National,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Publisher {
    pub id: String,
    pub name: String,
    pub website: Url,
    pub scope: Scope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<String>,
    /// External disinformation-risk score; informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRule {
    pub publisher_id: String,
    pub title_selector: String,
    pub body_selector: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_selector: Option<String>,
}

struct CompiledRule {
    title: PathSelector,
    body: PathSelector,
    date: Option<PathSelector>,
}

impl ExtractionRule {
    fn compile(&self) -> Result<CompiledRule> {
        Ok(CompiledRule {
            title: PathSelector::parse(&self.title_selector)?,
            body: PathSelector::parse(&self.body_selector)?,
            date: self
                .date_selector
                .as_deref()
                .map(PathSelector::parse)
                .transpose()?,
        })
    }

    /// Checks every selector parses.
    pub fn validate(&self) -> Result<()> {
        self.compile().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub publisher_id: String,
    pub url: Url,
    pub title: String,
    pub body: String,
    pub published_at: NaiveDate,
    pub fetched_at: DateTime<Utc>,
    pub sanitized: bool,
}

impl Article {
    /// Hex SHA-256 of the body, usable as a content key.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.body.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.body.trim().is_empty() {
            return Err(CorpusError::ArticleInvalid(format!("{}: empty body", self.id)));
        }
        if self.published_at > self.fetched_at.date_naive() {
            return Err(CorpusError::ArticleInvalid(format!(
                "{}: published after it was fetched",
                self.id
            )));
        }
        Ok(())
    }
}

/// Derives a stable article id from its publisher and URL.
pub fn article_id(publisher_id: &str, url: &Url) -> String {
    let digest = Sha256::digest(url.as_str().as_bytes());
    format!("{publisher_id}-{}", &hex::encode(digest)[..12])
}

/// Collapses whitespace runs to one space and trims.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Extra inputs for [`ingest_article`] that do not come from the page.
#[derive(Debug, Clone, Copy)]
pub struct IngestMeta {
    /// Used when the rule has no date selector or it finds nothing.
    pub published_at: Option<NaiveDate>,
    pub fetched_at: DateTime<Utc>,
}

/// Extracts title, body and date from a page using the publisher's rule.
///
/// Body nodes are joined in document order with a single newline; nodes
/// that are empty after whitespace normalization are dropped.
pub fn ingest_article(
    raw_html: &str,
    rule: &ExtractionRule,
    url: &Url,
    publisher_id: &str,
    meta: IngestMeta,
) -> Result<Article> {
    if rule.publisher_id != publisher_id {
        return Err(CorpusError::RuleMismatch {
            rule: rule.publisher_id.clone(),
            publisher: publisher_id.to_string(),
        });
    }
    let compiled = rule.compile()?;
    let doc = scraper::Html::parse_document(raw_html);

    let title = compiled
        .title
        .select(&doc)
        .into_iter()
        .map(|n| normalize_whitespace(&node_text(n)))
        .find(|t| !t.is_empty())
        .unwrap_or_default();

    let paragraphs: Vec<String> = compiled
        .body
        .select(&doc)
        .into_iter()
        .map(|n| normalize_whitespace(&node_text(n)))
        .filter(|t| !t.is_empty())
        .collect();
    if paragraphs.is_empty() {
        return Err(CorpusError::ExtractionEmpty {
            url: url.to_string(),
        });
    }

    let scraped_date = compiled.date.as_ref().and_then(|sel| {
        sel.select(&doc).into_iter().find_map(|n| {
            let el = n.value().as_element()?;
            ["datetime", "content"]
                .iter()
                .filter_map(|a| el.attr(a))
                .find_map(parse_date)
                .or_else(|| parse_date(&node_text(n)))
        })
    });
    let published_at = scraped_date
        .or(meta.published_at)
        .ok_or_else(|| CorpusError::DateMissing {
            url: url.to_string(),
        })?;

    let article = Article {
        id: article_id(publisher_id, url),
        publisher_id: publisher_id.to_string(),
        url: url.clone(),
        title,
        body: paragraphs.join("\n"),
        published_at,
        fetched_at: meta.fetched_at,
        sanitized: false,
    };
    article.validate()?;
    Ok(article)
}

/// Finds an ISO `YYYY-MM-DD` or Italian-style `DD/MM/YYYY` date in free text.
fn parse_date(text: &str) -> Option<NaiveDate> {
    let iso = Regex::new(r"(\d{4})-(\d{2})-(\d{2})").expect("static regex");
    if let Some(c) = iso.captures(text) {
        return NaiveDate::from_ymd_opt(c[1].parse().ok()?, c[2].parse().ok()?, c[3].parse().ok()?);
    }
    let dmy = Regex::new(r"(\d{1,2})[/.](\d{1,2})[/.](\d{4})").expect("static regex");
    let c = dmy.captures(text)?;
    NaiveDate::from_ymd_opt(c[3].parse().ok()?, c[2].parse().ok()?, c[1].parse().ok()?)
}

fn default_placeholder_publisher() -> String {
    "[PUBLISHER]".to_string()
}

fn default_placeholder_author() -> String {
    "[AUTHOR]".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionConfig {
    pub publisher_names: Vec<String>,
    /// Literal text with `<CapWord>` (capitalized word) and `<Word>` slots.
    #[serde(default)]
    pub author_patterns: Vec<String>,
    #[serde(default = "default_placeholder_publisher")]
    pub placeholder_publisher: String,
    #[serde(default = "default_placeholder_author")]
    pub placeholder_author: String,
}

/// A validated, compiled [`RedactionConfig`].
#[derive(Debug, Clone)]
pub struct Redactor {
    publishers: Option<Regex>,
    authors: Vec<Regex>,
    placeholder_publisher: String,
    placeholder_author: String,
}

const MAX_REDACTION_PASSES: usize = 16;

fn author_regex(pattern: &str) -> Result<Regex> {
    let token = Regex::new(r"<CapWord>|<Word>").expect("static regex");
    let mut out = String::from(r"\b");
    let mut last = 0;
    let literal = |s: &str| -> String {
        s.split(' ')
            .map(|part| {
                if part.is_empty() {
                    String::new()
                } else {
                    format!("(?i:{})", regex::escape(part))
                }
            })
            .collect::<Vec<_>>()
            .join(r"\s+")
    };
    for m in token.find_iter(pattern) {
        out.push_str(&literal(&pattern[last..m.start()]));
        out.push_str(match m.as_str() {
            "<CapWord>" => r"\p{Lu}[\p{Ll}'’]+",
            _ => r"[\p{L}'’]+",
        });
        last = m.end();
    }
    out.push_str(&literal(&pattern[last..]));
    out.push_str(r"\b");
    if pattern.trim().is_empty() {
        return Err(CorpusError::RedactionInvalid("empty author pattern".into()));
    }
    Regex::new(&out).map_err(|e| CorpusError::RedactionInvalid(format!("{pattern}: {e}")))
}

impl Redactor {
    pub fn new(config: &RedactionConfig) -> Result<Redactor> {
        let invalid = |m: String| Err(CorpusError::RedactionInvalid(m));
        let (pp, pa) = (&config.placeholder_publisher, &config.placeholder_author);
        if pp.trim().is_empty() || pa.trim().is_empty() {
            return invalid("placeholders must be non-empty".into());
        }
        if pp == pa {
            return invalid("placeholders must differ".into());
        }
        let mut names: Vec<&str> = config
            .publisher_names
            .iter()
            .map(|n| n.trim())
            .filter(|n| !n.is_empty())
            .collect();
        // longest first so "Il Giornale di Sicilia" wins over "Il Giornale"
        names.sort_by_key(|n| std::cmp::Reverse(n.chars().count()));
        let publishers = if names.is_empty() {
            None
        } else {
            let alternation = names
                .iter()
                .map(|n| regex::escape(n).replace(r"\ ", r"\s+").replace(' ', r"\s+"))
                .collect::<Vec<_>>()
                .join("|");
            Some(
                Regex::new(&format!(r"(?i)\b(?:{alternation})\b"))
                    .map_err(|e| CorpusError::RedactionInvalid(e.to_string()))?,
            )
        };
        let authors = config
            .author_patterns
            .iter()
            .map(|p| author_regex(p))
            .collect::<Result<Vec<_>>>()?;
        let redactor = Redactor {
            publishers,
            authors,
            placeholder_publisher: pp.clone(),
            placeholder_author: pa.clone(),
        };
        for placeholder in [pp, pa] {
            if redactor.hits(placeholder) > 0 {
                return invalid(format!("placeholder '{placeholder}' matches a redaction target"));
            }
        }
        Ok(redactor)
    }

    /// Number of redaction-target matches in `text`.
    pub fn hits(&self, text: &str) -> usize {
        let publisher_hits = self
            .publishers
            .as_ref()
            .map_or(0, |re| re.find_iter(text).count());
        publisher_hits
            + self
                .authors
                .iter()
                .map(|re| re.find_iter(text).count())
                .sum::<usize>()
    }

    pub fn redact(&self, text: &str) -> String {
        let mut current = text.to_string();
        for _ in 0..MAX_REDACTION_PASSES {
            let mut next = current.clone();
            for re in &self.authors {
                next = re
                    .replace_all(&next, regex::NoExpand(&self.placeholder_author))
                    .into_owned();
            }
            if let Some(re) = &self.publishers {
                next = re
                    .replace_all(&next, regex::NoExpand(&self.placeholder_publisher))
                    .into_owned();
            }
            if next == current {
                break;
            }
            current = next;
        }
        current
    }

    pub fn apply(&self, article: &Article) -> Article {
        Article {
            title: self.redact(&article.title),
            body: self.redact(&article.body),
            sanitized: true,
            ..article.clone()
        }
    }
}

/// Replaces publisher names and author bylines with placeholders.
pub fn sanitize(article: &Article, config: &RedactionConfig) -> Result<Article> {
    Ok(Redactor::new(config)?.apply(article))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub per_publisher: usize,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.per_publisher == 0 {
            return Err(CorpusError::SamplingInvalid("per_publisher must be >= 1".into()));
        }
        if self.window_start >= self.window_end {
            return Err(CorpusError::SamplingInvalid(
                "window_start must precede window_end".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        (self.window_start..=self.window_end).contains(&date)
    }
}

fn publisher_seed(seed: u64, publisher_id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(publisher_id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Draws `per_publisher` in-window articles per publisher, uniformly and
/// reproducibly for a given seed. Output is ordered by publisher then date.
pub fn sample_corpus(articles: &[Article], spec: &SamplingSpec, seed: u64) -> Result<Vec<Article>> {
    spec.validate()?;
    let mut by_publisher: BTreeMap<&str, Vec<&Article>> = BTreeMap::new();
    for article in articles {
        let eligible = by_publisher.entry(&article.publisher_id).or_default();
        if spec.contains(article.published_at) {
            eligible.push(article);
        }
    }
    let mut out = Vec::new();
    for (publisher, mut eligible) in by_publisher {
        if eligible.len() < spec.per_publisher {
            return Err(CorpusError::InsufficientArticles {
                publisher: publisher.to_string(),
                have: eligible.len(),
                need: spec.per_publisher,
            });
        }
        eligible.sort_by(|a, b| (a.published_at, &a.id).cmp(&(b.published_at, &b.id)));
        let mut rng = ChaCha8Rng::seed_from_u64(publisher_seed(seed, publisher));
        let mut picked: Vec<&Article> = index::sample(&mut rng, eligible.len(), spec.per_publisher)
            .into_iter()
            .map(|i| eligible[i])
            .collect();
        picked.sort_by(|a, b| (a.published_at, &a.id).cmp(&(b.published_at, &b.id)));
        out.extend(picked.into_iter().cloned());
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Article>> {
    let articles: Vec<Article> = jsonl::read_all(path)?;
    for article in &articles {
        article.validate()?;
    }
    Ok(articles)
}

pub fn write_corpus(path: &Path, articles: &[Article]) -> Result<()> {
    Ok(jsonl::write_all(path, articles)?)
}

/// Where to find a publisher's articles and how to extract them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub name: String,
    pub website: Url,
    pub scope: Scope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_score: Option<f64>,
    pub title_selector: String,
    pub body_selector: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_selector: Option<String>,
    #[serde(default)]
    pub articles: Vec<ArticleRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleRef {
    pub url: Url,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_at: Option<NaiveDate>,
}

/// Publisher registry with extraction rules, keyed by publisher id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceRegistry(pub BTreeMap<String, SourceEntry>);

impl SourceRegistry {
    pub fn load(text: &str) -> Result<SourceRegistry> {
        let registry: SourceRegistry = serde_json::from_str(text)?;
        for id in registry.0.keys() {
            registry.rule(id).expect("key exists").validate()?;
        }
        Ok(registry)
    }

    pub fn publisher(&self, id: &str) -> Option<Publisher> {
        self.0.get(id).map(|e| Publisher {
            id: id.to_string(),
            name: e.name.clone(),
            website: e.website.clone(),
            scope: e.scope,
            orientation: e.orientation.clone(),
            risk_score: e.risk_score,
        })
    }

    pub fn rule(&self, id: &str) -> Option<ExtractionRule> {
        self.0.get(id).map(|e| ExtractionRule {
            publisher_id: id.to_string(),
            title_selector: e.title_selector.clone(),
            body_selector: e.body_selector.clone(),
            date_selector: e.date_selector.clone(),
        })
    }

    pub fn publisher_names(&self) -> Vec<String> {
        self.0.values().map(|e| e.name.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn rule(title: &str, body: &str) -> ExtractionRule {
        ExtractionRule {
            publisher_id: "p1".into(),
            title_selector: title.into(),
            body_selector: body.into(),
            date_selector: None,
        }
    }

    fn meta() -> IngestMeta {
        IngestMeta {
            published_at: NaiveDate::from_ymd_opt(2021, 5, 3),
            fetched_at: Utc.with_ymd_and_hms(2021, 11, 1, 8, 0, 0).unwrap(),
        }
    }

    fn url() -> Url {
        Url::parse("https://news.example/a/1").unwrap()
    }

    fn article(body: &str) -> Article {
        Article {
            id: "a1".into(),
            publisher_id: "p1".into(),
            url: url(),
            title: "Titolo".into(),
            body: body.into(),
            published_at: NaiveDate::from_ymd_opt(2021, 5, 3).unwrap(),
            fetched_at: Utc.with_ymd_and_hms(2021, 11, 1, 8, 0, 0).unwrap(),
            sanitized: false,
        }
    }

    #[test]
    fn ingest_headline_and_body() {
        let html = "<h1>Headline</h1><article><p>Body.</p></article>";
        let a = ingest_article(html, &rule("//h1", "//article//p"), &url(), "p1", meta()).unwrap();
        assert_eq!(a.title, "Headline");
        assert_eq!(a.body, "Body.");
        assert!(!a.sanitized);
    }

    #[test]
    fn ingest_three_paragraph_fixture() {
        // expected output written out by hand from the fixture below
        let html = r#"<html><head><title>x</title></head><body>
            <h1 class="t">  Un   titolo
            </h1>
            <div class="body">
              <p>P1</p>
              <p>   </p>
              <div class="ad"><p>pubblicità</p></div>
              <p>P2</p>
              <p>
                 P3
              </p>
            </div></body></html>"#;
        let a = ingest_article(
            html,
            &rule("//h1[@class='t']", "//div[@class='body']/p"),
            &url(),
            "p1",
            meta(),
        )
        .unwrap();
        assert_eq!(a.title, "Un titolo");
        assert_eq!(a.body, "P1\nP2\nP3");
    }

    #[test]
    fn ingest_errors() {
        let html = "<h1>Headline</h1><article><p>  </p></article>";
        let err = ingest_article(html, &rule("//h1", "//article//p"), &url(), "p1", meta());
        assert!(matches!(err, Err(CorpusError::ExtractionEmpty { .. })));
        let err = ingest_article(html, &rule("//h1", "//section"), &url(), "p1", meta());
        assert!(matches!(err, Err(CorpusError::ExtractionEmpty { .. })));
        let err = ingest_article(html, &rule("//h1[", "//p"), &url(), "p1", meta());
        assert!(matches!(err, Err(CorpusError::SelectorInvalid(_))));
        let err = ingest_article(html, &rule("//h1", "//p"), &url(), "p2", meta());
        assert!(matches!(err, Err(CorpusError::RuleMismatch { .. })));
    }

    #[test]
    fn ingest_reads_date_from_page() {
        let html = r#"<h1>T</h1><time datetime="2021-06-15T10:00">15 giugno</time><p>x</p>"#;
        let mut r = rule("//h1", "//p");
        r.date_selector = Some("//time".into());
        let a = ingest_article(html, &r, &url(), "p1", meta()).unwrap();
        assert_eq!(a.published_at, NaiveDate::from_ymd_opt(2021, 6, 15).unwrap());

        let html = r#"<h1>T</h1><span class="d">Pubblicato il 02/07/2021</span><p>x</p>"#;
        r.date_selector = Some("//span[@class='d']".into());
        let a = ingest_article(html, &r, &url(), "p1", meta()).unwrap();
        assert_eq!(a.published_at, NaiveDate::from_ymd_opt(2021, 7, 2).unwrap());

        let no_date = IngestMeta {
            published_at: None,
            ..meta()
        };
        let err = ingest_article("<h1>T</h1><p>x</p>", &rule("//h1", "//p"), &url(), "p1", no_date);
        assert!(matches!(err, Err(CorpusError::DateMissing { .. })));
    }

    fn redactions() -> RedactionConfig {
        RedactionConfig {
            publisher_names: vec!["La Verità".into(), "Il Giornale".into()],
            author_patterns: vec!["di <CapWord> <CapWord>".into()],
            placeholder_publisher: "[PUBLISHER]".into(),
            placeholder_author: "[AUTHOR]".into(),
        }
    }

    #[test]
    fn sanitize_examples() {
        let out = sanitize(&article("secondo La Verità, il governo…"), &redactions()).unwrap();
        assert_eq!(out.body, "secondo [PUBLISHER], il governo…");
        assert!(out.sanitized);

        let out = sanitize(&article("di Mario Rossi"), &redactions()).unwrap();
        assert_eq!(out.body, "[AUTHOR]");

        let out = sanitize(&article("Nessun nome qui."), &redactions()).unwrap();
        assert_eq!(out.body, "Nessun nome qui.");
        assert!(out.sanitized);
    }

    #[test]
    fn sanitize_is_case_insensitive_and_word_bounded() {
        let out = sanitize(&article("LA VERITÀ e il giornale; Il Giornaletto"), &redactions())
            .unwrap();
        assert_eq!(out.body, "[PUBLISHER] e [PUBLISHER]; Il Giornaletto");
    }

    #[test]
    fn placeholders_are_validated() {
        let mut cfg = redactions();
        cfg.placeholder_author = cfg.placeholder_publisher.clone();
        assert!(Redactor::new(&cfg).is_err());
        let mut cfg = redactions();
        cfg.placeholder_publisher = "Il Giornale".into();
        assert!(Redactor::new(&cfg).is_err());
        let mut cfg = redactions();
        cfg.placeholder_author = "".into();
        assert!(Redactor::new(&cfg).is_err());
    }

    fn dated(id: &str, publisher: &str, y: i32, m: u32, d: u32) -> Article {
        Article {
            id: id.into(),
            publisher_id: publisher.into(),
            published_at: NaiveDate::from_ymd_opt(y, m, d).unwrap(),
            ..article("testo")
        }
    }

    fn window() -> SamplingSpec {
        SamplingSpec {
            per_publisher: 10,
            window_start: NaiveDate::from_ymd_opt(2021, 4, 1).unwrap(),
            window_end: NaiveDate::from_ymd_opt(2021, 10, 31).unwrap(),
        }
    }

    #[test]
    fn sample_34_publishers_gives_340() {
        let mut all = Vec::new();
        for p in 0..34 {
            for i in 0..14 {
                all.push(dated(&format!("p{p}-{i}"), &format!("p{p:02}"), 2021, 4 + (i % 7), 1 + i));
            }
        }
        let picked = sample_corpus(&all, &window(), 7).unwrap();
        assert_eq!(picked.len(), 340);
        let again = sample_corpus(&all, &window(), 7).unwrap();
        assert_eq!(picked, again);
        let other = sample_corpus(&all, &window(), 8).unwrap();
        assert_ne!(picked, other);
        let mut sorted = picked.clone();
        sorted.sort_by(|a, b| {
            (&a.publisher_id, a.published_at, &a.id).cmp(&(&b.publisher_id, b.published_at, &b.id))
        });
        assert_eq!(picked, sorted);
    }

    #[test]
    fn sample_excludes_out_of_window_articles() {
        let mut all: Vec<Article> = (0..10)
            .map(|i| dated(&format!("in{i}"), "p1", 2021, 5, 1 + i))
            .collect();
        all.push(dated("early", "p1", 2021, 3, 31));
        all.push(dated("late", "p1", 2021, 11, 1));
        let picked = sample_corpus(&all, &window(), 1).unwrap();
        assert_eq!(picked.len(), 10);
        assert!(picked.iter().all(|a| a.id.starts_with("in")));
    }

    #[test]
    fn sample_reports_insufficient_articles() {
        let all: Vec<Article> = (0..7)
            .map(|i| dated(&format!("a{i}"), "p1", 2021, 5, 1 + i))
            .collect();
        match sample_corpus(&all, &window(), 1) {
            Err(CorpusError::InsufficientArticles {
                publisher,
                have,
                need,
            }) => assert_eq!((publisher.as_str(), have, need), ("p1", 7, 10)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sampling_spec_is_validated() {
        let mut spec = window();
        spec.per_publisher = 0;
        assert!(spec.validate().is_err());
        let mut spec = window();
        spec.window_end = spec.window_start;
        assert!(spec.validate().is_err());
    }
}
