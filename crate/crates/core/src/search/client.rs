use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::SearchError;

/// One hit as returned by a hosting platform, before ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoHit {
    pub full_name: String,
    pub url: String,
    pub stars: u64,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub readme: String,
}

pub trait SearchClient: Send + Sync {
    /// Repositories matching every keyword, at most `limit`, in any order.
    fn search(&self, keywords: &[String], limit: usize) -> Result<Vec<RepoHit>, SearchError>;

    /// README text for a repository, when the client can fetch it.
    fn readme(&self, _full_name: &str) -> Result<Option<String>, SearchError> {
        Ok(None)
    }

    /// Number of search requests issued so far.
    fn calls(&self) -> usize;
}

#[derive(Debug, Deserialize)]
struct StubRecord {
    full_name: String,
    #[serde(default)]
    url: Option<String>,
    stars: u64,
    #[serde(default)]
    description: String,
    #[serde(default)]
    readme: String,
}

/// In-memory index loaded from a JSON list of repository records.
#[derive(Debug, Default)]
pub struct StubIndex {
    hits: Vec<RepoHit>,
    calls: AtomicUsize,
}

impl StubIndex {
    pub fn new(hits: Vec<RepoHit>) -> Self {
        Self {
            hits,
            calls: AtomicUsize::new(0),
        }
    }

    /// Relative `url` values are resolved against the index file's directory.
    pub fn load(path: &Path) -> Result<Self, SearchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SearchError::ApiUnreachable(format!("{}: {e}", path.display())))?;
        let records: Vec<StubRecord> = serde_json::from_str(&text)
            .map_err(|e| SearchError::ApiUnreachable(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let hits = records
            .into_iter()
            .map(|r| {
                let url = match r.url {
                    Some(u) if u.contains("://") || Path::new(&u).is_absolute() => u,
                    Some(u) => base.join(u).display().to_string(),
                    None => format!("https://github.com/{}.git", r.full_name),
                };
                RepoHit {
                    full_name: r.full_name,
                    url,
                    stars: r.stars,
                    description: r.description,
                    readme: r.readme,
                }
            })
            .collect();
        Ok(Self::new(hits))
    }
}

impl SearchClient for StubIndex {
    fn search(&self, keywords: &[String], limit: usize) -> Result<Vec<RepoHit>, SearchError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let wanted: Vec<String> = keywords.iter().map(|k| k.to_lowercase()).collect();
        Ok(self
            .hits
            .iter()
            .filter(|hit| {
                let haystack =
                    format!("{} {} {}", hit.full_name, hit.description, hit.readme).to_lowercase();
                wanted.iter().all(|k| haystack.contains(k.as_str()))
            })
            .take(limit)
            .cloned()
            .collect())
    }

    fn readme(&self, full_name: &str) -> Result<Option<String>, SearchError> {
        Ok(self
            .hits
            .iter()
            .find(|h| h.full_name == full_name)
            .map(|h| h.readme.clone()))
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// GitHub repository search, token from `GITHUB_TOKEN`.
pub struct GitHubClient {
    http: reqwest::blocking::Client,
    api_base: String,
    token: Option<String>,
    max_attempts: u32,
    base_backoff: Duration,
    // Requests under one credential go out one at a time.
    gate: Mutex<()>,
    calls: AtomicUsize,
}

impl GitHubClient {
    pub const TOKEN_VAR: &'static str = "GITHUB_TOKEN";

    pub fn from_env() -> Result<Self, SearchError> {
        Self::new("https://api.github.com", std::env::var(Self::TOKEN_VAR).ok())
    }

    pub fn new(api_base: &str, token: Option<String>) -> Result<Self, SearchError> {
        let http = reqwest::blocking::Client::builder()
            .user_agent("toolsmith")
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| SearchError::ApiUnreachable(e.to_string()))?;
        Ok(Self {
            http,
            api_base: api_base.trim_end_matches('/').to_string(),
            token,
            max_attempts: 3,
            base_backoff: Duration::from_secs(1),
            gate: Mutex::new(()),
            calls: AtomicUsize::new(0),
        })
    }

    fn get(&self, url: &str, accept: &str) -> Result<reqwest::blocking::Response, SearchError> {
        let _serial = self.gate.lock().expect("search gate");
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut req = self.http.get(url).header("Accept", accept);
            if let Some(token) = &self.token {
                req = req.bearer_auth(token);
            }
            let resp = req
                .send()
                .map_err(|e| SearchError::ApiUnreachable(e.to_string()))?;
            let status = resp.status().as_u16();
            let limited = status == 429
                || (status == 403
                    && resp
                        .headers()
                        .get("x-ratelimit-remaining")
                        .and_then(|v| v.to_str().ok())
                        == Some("0"));
            if !limited {
                return Ok(resp);
            }
            let retry_after = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<u64>().ok())
                .map(Duration::from_secs);
            if attempt >= self.max_attempts {
                return Err(SearchError::RateLimited {
                    retry_after: retry_after.unwrap_or(self.base_backoff),
                });
            }
            let backoff = retry_after.unwrap_or(self.base_backoff * 2u32.pow(attempt - 1));
            tracing::warn!(?backoff, attempt, "search rate-limited, backing off");
            std::thread::sleep(backoff);
        }
    }
}

#[derive(Deserialize)]
struct SearchPage {
    items: Vec<SearchItem>,
}

#[derive(Deserialize)]
struct SearchItem {
    full_name: String,
    clone_url: String,
    stargazers_count: u64,
    #[serde(default)]
    description: Option<String>,
}

impl SearchClient for GitHubClient {
    fn search(&self, keywords: &[String], limit: usize) -> Result<Vec<RepoHit>, SearchError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut url = url::Url::parse(&format!("{}/search/repositories", self.api_base))
            .map_err(|e| SearchError::ApiUnreachable(e.to_string()))?;
        url.query_pairs_mut()
            .append_pair("q", &keywords.join(" "))
            .append_pair("sort", "stars")
            .append_pair("order", "desc")
            .append_pair("per_page", &limit.clamp(1, 100).to_string());
        let resp = self.get(url.as_str(), "application/vnd.github+json")?;
        if !resp.status().is_success() {
            return Err(SearchError::ApiUnreachable(format!("HTTP {}", resp.status())));
        }
        let page: SearchPage = resp
            .json()
            .map_err(|e| SearchError::ApiUnreachable(e.to_string()))?;
        Ok(page
            .items
            .into_iter()
            .take(limit)
            .map(|item| RepoHit {
                full_name: item.full_name,
                url: item.clone_url,
                stars: item.stargazers_count,
                description: item.description.unwrap_or_default(),
                readme: String::new(),
            })
            .collect())
    }

    fn readme(&self, full_name: &str) -> Result<Option<String>, SearchError> {
        let url = format!("{}/repos/{full_name}/readme", self.api_base);
        let resp = self.get(&url, "application/vnd.github.raw")?;
        if resp.status().as_u16() == 404 {
            return Ok(None);
        }
        resp.text()
            .map(Some)
            .map_err(|e| SearchError::ApiUnreachable(e.to_string()))
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}
