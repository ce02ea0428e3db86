use std::time::Duration;

use chrono::{DateTime, Utc};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{IngestError, Platform, QuerySpec, RawPost};

/// A search result as returned by an upstream (or mock) source API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceItem {
    pub id: String,
    pub author: String,
    #[serde(default)]
    pub verified: bool,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub lang: Option<String>,
    pub text: String,
    #[serde(default)]
    pub is_forward: bool,
    #[serde(default)]
    pub links: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SearchRequest {
    pub keywords: Vec<String>,
    pub language: Option<String>,
    pub start_time: DateTime<Utc>,
    pub end_time: DateTime<Utc>,
    pub max_results: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SearchResponse {
    pub items: Vec<SourceItem>,
}

pub trait SourceClient: Send + Sync {
    fn platform(&self) -> Platform;

    fn search(&self, spec: &QuerySpec, max_results: usize) -> Result<Vec<SourceItem>, IngestError>;
}

/// Runs one query and maps the results into posts, never returning more than
/// the platform's per-batch cap.
pub fn fetch_batch(client: &dyn SourceClient, spec: &QuerySpec) -> Result<Vec<RawPost>, IngestError> {
    let platform = client.platform();
    let cap = platform.batch_cap();
    let items = client.search(spec, cap)?;
    Ok(items
        .into_iter()
        .filter(|item| !item.text.trim().is_empty())
        .take(cap)
        .map(|item| RawPost {
            post_id: format!("{}:{}", platform.as_str(), item.id),
            source_account: item.author,
            platform,
            verified: item.verified,
            timestamp: item.created_at,
            language: item
                .lang
                .filter(|l| !l.trim().is_empty())
                .unwrap_or_else(|| "und".to_string()),
            text: item.text,
            is_forward: item.is_forward,
            cited_links: item.links,
        })
        .collect())
}

/// JSON-over-HTTP source client. `POST {base_url}/search` with a bearer token.
#[derive(Debug, Clone)]
pub struct HttpSourceClient {
    platform: Platform,
    base_url: String,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpSourceClient {
    pub fn new(platform: Platform, base_url: impl Into<String>, token: Option<String>) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .expect("http client builds");
        Self {
            platform,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token,
            http,
        }
    }

    /// Reads `QT_SOCIAL_URL`/`QT_SOCIAL_TOKEN` or `QT_NEWS_URL`/`QT_NEWS_TOKEN`.
    pub fn from_env(platform: Platform) -> Result<Self, IngestError> {
        let (url_var, token_var) = match platform {
            Platform::Social => ("QT_SOCIAL_URL", "QT_SOCIAL_TOKEN"),
            Platform::News => ("QT_NEWS_URL", "QT_NEWS_TOKEN"),
        };
        let url = std::env::var(url_var)
            .map_err(|_| IngestError::Config(format!("{url_var} is not set")))?;
        Ok(Self::new(platform, url, std::env::var(token_var).ok()))
    }
}

impl SourceClient for HttpSourceClient {
    fn platform(&self) -> Platform {
        self.platform
    }

    fn search(&self, spec: &QuerySpec, max_results: usize) -> Result<Vec<SourceItem>, IngestError> {
        let body = SearchRequest {
            keywords: spec.keywords.clone(),
            language: spec.language_hint.clone(),
            start_time: spec.window_start,
            end_time: spec.window_end,
            max_results,
        };
        let mut req = self.http.post(format!("{}/search", self.base_url)).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| IngestError::Retryable {
            message: e.to_string(),
            retry_after: None,
        })?;
        let status = resp.status();
        match status {
            s if s.is_success() => {
                let parsed: SearchResponse = resp
                    .json()
                    .map_err(|e| IngestError::Source(format!("bad search response: {e}")))?;
                Ok(parsed.items)
            }
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => {
                Err(IngestError::Auth(format!("{} returned {status}", self.base_url)))
            }
            StatusCode::TOO_MANY_REQUESTS => {
                let retry_after = resp
                    .headers()
                    .get(reqwest::header::RETRY_AFTER)
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(Duration::from_secs);
                Err(IngestError::Retryable {
                    message: "rate limited".into(),
                    retry_after,
                })
            }
            s if s.is_server_error() => Err(IngestError::Retryable {
                message: format!("upstream returned {s}"),
                retry_after: None,
            }),
            s => Err(IngestError::Source(format!("upstream returned {s}"))),
        }
    }
}
