//! Repository retrieval: topic extraction, star-ranked search, one refinement
//! round on empty results, and rank-order evaluation.

mod client;

pub use client::{GitHubClient, RepoHit, SearchClient, StubIndex};

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError, PurposeTag, StructuredOutput};

pub const DEFAULT_K: usize = 50;
pub const DEFAULT_M: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("empty query")]
    EmptyQuery,
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
    #[error("search API unreachable: {0}")]
    ApiUnreachable(String),
    #[error("search API rate-limited, retry after {retry_after:?}")]
    RateLimited { retry_after: Duration },
    #[error("no results after refinement")]
    RefinementExhausted,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserQuery {
    pub text: String,
    pub explicit_repo_link: Option<String>,
}

impl UserQuery {
    /// A query; a repository link embedded in the text is picked up as the
    /// explicit link.
    pub fn new(text: impl Into<String>) -> Result<Self, SearchError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(SearchError::EmptyQuery);
        }
        let explicit_repo_link = find_repo_link(&text);
        Ok(Self {
            text,
            explicit_repo_link,
        })
    }

    pub fn with_link(text: impl Into<String>, link: impl Into<String>) -> Result<Self, SearchError> {
        let mut query = Self::new(text)?;
        query.explicit_repo_link = Some(link.into());
        Ok(query)
    }
}

fn find_repo_link(text: &str) -> Option<String> {
    static LINK: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    let re = LINK.get_or_init(|| {
        regex::Regex::new(r"https?://(?:www\.)?github\.com/[\w.-]+/[\w.-]+").expect("valid regex")
    });
    re.find(text)
        .map(|m| m.as_str().trim_end_matches(['.', ',']).to_string())
}

/// Raw model output for topic extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicDraft {
    pub keywords: Vec<String>,
}

impl StructuredOutput for TopicDraft {
    const SCHEMA_ID: &'static str = "topic-keywords/v1";

    fn check(&self) -> Result<(), String> {
        if self.keywords.iter().all(|k| k.trim().is_empty()) {
            return Err("no keywords".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicKeywords {
    keywords: Vec<String>,
    cap: usize,
}

impl TopicKeywords {
    /// Trims, drops blanks and case-folded duplicates, keeps the first `cap`.
    pub fn new(raw: Vec<String>, cap: usize) -> Result<Self, SearchError> {
        if cap == 0 {
            return Err(SearchError::Precondition("m must be positive"));
        }
        let mut seen = BTreeSet::new();
        let keywords: Vec<String> = raw
            .into_iter()
            .map(|k| k.trim().to_string())
            .filter(|k| !k.is_empty() && seen.insert(k.to_lowercase()))
            .take(cap)
            .collect();
        if keywords.is_empty() {
            return Err(SearchError::Precondition("at least one keyword required"));
        }
        Ok(Self { keywords, cap })
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn cap(&self) -> usize {
        self.cap
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoCandidate {
    pub full_name: String,
    pub url: String,
    pub stars: u64,
    pub description: String,
    pub rank: usize,
    #[serde(default)]
    pub readme_excerpt: String,
}

impl RepoCandidate {
    /// Candidate for a link given by the user; nothing is searched.
    pub fn from_link(link: &str) -> Self {
        let trimmed = link.trim_end_matches('/').trim_end_matches(".git");
        let parts: Vec<&str> = trimmed.rsplit('/').take(2).collect();
        let full_name = match parts.as_slice() {
            [name, owner] if !owner.contains(':') => format!("{owner}/{name}"),
            [name, ..] => (*name).to_string(),
            [] => trimmed.to_string(),
        };
        Self {
            full_name,
            url: link.to_string(),
            stars: 0,
            description: String::new(),
            rank: 1,
            readme_excerpt: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedQuery {
    pub query: String,
}

impl StructuredOutput for RefinedQuery {
    const SCHEMA_ID: &'static str = "refined-query/v1";

    fn check(&self) -> Result<(), String> {
        if self.query.trim().is_empty() {
            return Err("refined query is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub candidate: String,
    pub core_functionality: String,
    pub has_complete_structure: bool,
    pub fulfills_query: bool,
    #[serde(default)]
    pub reason: String,
}

impl EvaluationReport {
    pub fn qualifies(&self) -> bool {
        self.has_complete_structure && self.fulfills_query
    }
}

impl StructuredOutput for EvaluationReport {
    const SCHEMA_ID: &'static str = "evaluation-report/v1";

    fn check(&self) -> Result<(), String> {
        if !self.qualifies() && self.reason.trim().is_empty() {
            return Err("reason required when a check fails".into());
        }
        Ok(())
    }
}

const TOPIC_SYSTEM: &str = "You extract search topics for finding an open-source Python repository \
that solves a user's task. Answer with JSON {\"keywords\": [..]}: short phrases, most important \
first, no duplicates.";

const REFINE_SYSTEM: &str = "A repository search returned nothing. Rewrite the user's task as a \
broader query that keeps its meaning. Answer with JSON {\"query\": \"...\"}.";

const EVALUATE_SYSTEM: &str = "You review a candidate repository for a user's task. Decide whether \
it has a complete code structure (importable source, dependency declaration, entry points) and \
whether it fulfills the task. Answer with JSON {\"candidate\", \"core_functionality\", \
\"has_complete_structure\", \"fulfills_query\", \"reason\"}.";

pub fn extract_topics(gateway: &Gateway, query: &UserQuery, m: usize) -> Result<TopicKeywords, SearchError> {
    if query.text.trim().is_empty() {
        return Err(SearchError::EmptyQuery);
    }
    let user = format!("Task: {}\nReturn at most {m} keywords.", query.text.trim());
    let draft: TopicDraft = gateway.ask(PurposeTag::TopicExtraction, TOPIC_SYSTEM, &user)?;
    TopicKeywords::new(draft.keywords, m)
}

/// Top-K by stars; ties broken by full name; ranks from 1.
pub fn search_repositories(
    client: &dyn SearchClient,
    keywords: &TopicKeywords,
    k: usize,
) -> Result<Vec<RepoCandidate>, SearchError> {
    if k == 0 {
        return Err(SearchError::Precondition("K must be positive"));
    }
    let hits = client.search(keywords.keywords(), k)?;
    Ok(rank_hits(hits, k))
}

pub fn rank_hits(mut hits: Vec<RepoHit>, k: usize) -> Vec<RepoCandidate> {
    hits.sort_by(|a, b| b.stars.cmp(&a.stars).then_with(|| a.full_name.cmp(&b.full_name)));
    hits.into_iter()
        .take(k)
        .enumerate()
        .map(|(i, hit)| RepoCandidate {
            full_name: hit.full_name,
            url: hit.url,
            stars: hit.stars,
            description: hit.description,
            rank: i + 1,
            readme_excerpt: excerpt(&hit.readme, 2000),
        })
        .collect()
}

fn excerpt(text: &str, max_chars: usize) -> String {
    text.chars().take(max_chars).collect()
}

pub fn refine_query(
    gateway: &Gateway,
    query: &UserQuery,
    prior: &[String],
) -> Result<UserQuery, SearchError> {
    if prior.is_empty() {
        return Err(SearchError::Precondition("refinement needs the prior keywords"));
    }
    let user = format!(
        "Original task: {}\nKeywords that found nothing: {}",
        query.text.trim(),
        prior.join(", ")
    );
    let refined: RefinedQuery = gateway.ask(PurposeTag::TopicExtraction, REFINE_SYSTEM, &user)?;
    Ok(UserQuery {
        text: refined.query.trim().to_string(),
        explicit_repo_link: query.explicit_repo_link.clone(),
    })
}

pub fn evaluate_repository(
    gateway: &Gateway,
    candidate: &RepoCandidate,
    query: &UserQuery,
) -> Result<EvaluationReport, SearchError> {
    let user = format!(
        "Task: {}\nRepository: {} ({} stars)\nDescription: {}\nREADME excerpt:\n{}",
        query.text.trim(),
        candidate.full_name,
        candidate.stars,
        candidate.description,
        candidate.readme_excerpt
    );
    let mut report: EvaluationReport = gateway.ask(PurposeTag::RepoEvaluation, EVALUATE_SYSTEM, &user)?;
    report.candidate = candidate.full_name.clone();
    Ok(report)
}

/// Outcome of [`select_repository`], with the bookkeeping tests look at.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub candidate: Option<RepoCandidate>,
    pub keywords: Option<TopicKeywords>,
    pub refinements: usize,
    pub evaluations: Vec<EvaluationReport>,
}

pub fn select_repository(
    gateway: &Gateway,
    client: &dyn SearchClient,
    query: &UserQuery,
    k: usize,
    m: usize,
) -> Result<Selection, SearchError> {
    if let Some(link) = &query.explicit_repo_link {
        return Ok(Selection {
            candidate: Some(RepoCandidate::from_link(link)),
            keywords: None,
            refinements: 0,
            evaluations: Vec::new(),
        });
    }

    let mut keywords = extract_topics(gateway, query, m)?;
    let mut candidates = search_repositories(client, &keywords, k)?;
    let mut refinements = 0;
    let mut active_query = query.clone();
    if candidates.is_empty() {
        active_query = refine_query(gateway, query, keywords.keywords())?;
        refinements = 1;
        keywords = extract_topics(gateway, &active_query, m)?;
        candidates = search_repositories(client, &keywords, k)?;
        if candidates.is_empty() {
            return Err(SearchError::RefinementExhausted);
        }
    }

    let mut evaluations = Vec::new();
    for mut candidate in candidates {
        if candidate.readme_excerpt.is_empty() {
            if let Some(readme) = client.readme(&candidate.full_name)? {
                candidate.readme_excerpt = excerpt(&readme, 2000);
            }
        }
        let report = evaluate_repository(gateway, &candidate, &active_query)?;
        let pass = report.qualifies();
        evaluations.push(report);
        if pass {
            return Ok(Selection {
                candidate: Some(candidate),
                keywords: Some(keywords),
                refinements,
                evaluations,
            });
        }
    }
    Ok(Selection {
        candidate: None,
        keywords: Some(keywords),
        refinements,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hit(name: &str, stars: u64) -> RepoHit {
        RepoHit {
            full_name: name.into(),
            url: format!("https://example.invalid/{name}"),
            stars,
            description: "pca tools".into(),
            readme: String::new(),
        }
    }

    #[test]
    fn ranks_by_stars_then_name() {
        let ranked = rank_hits(vec![hit("a/x", 5), hit("b/y", 90), hit("c/z", 12), hit("a/w", 90)], 50);
        let order: Vec<(&str, u64, usize)> = ranked
            .iter()
            .map(|c| (c.full_name.as_str(), c.stars, c.rank))
            .collect();
        assert_eq!(order, vec![("a/w", 90, 1), ("b/y", 90, 2), ("c/z", 12, 3), ("a/x", 5, 4)]);
    }

    #[test]
    fn k_truncates() {
        let ranked = rank_hits((0..10).map(|i| hit(&format!("o/r{i}"), i)).collect(), 3);
        assert_eq!(ranked.len(), 3);
        assert_eq!(ranked[0].stars, 9);
    }

    #[test]
    fn keywords_are_capped_and_unique() {
        let kw = TopicKeywords::new(
            ["Stroke", "stroke", " risk ", "", "a", "b", "c", "d"].map(String::from).to_vec(),
            5,
        )
        .unwrap();
        assert_eq!(kw.keywords(), ["Stroke", "risk", "a", "b", "c"]);
    }

    #[test]
    fn whitespace_query_is_rejected() {
        assert!(matches!(UserQuery::new("  \n"), Err(SearchError::EmptyQuery)));
    }

    #[test]
    fn link_in_text_is_detected() {
        let q = UserQuery::new("use https://github.com/acme/stroke-kit.").unwrap();
        assert_eq!(q.explicit_repo_link.as_deref(), Some("https://github.com/acme/stroke-kit"));
        assert_eq!(RepoCandidate::from_link("https://github.com/acme/stroke-kit.git").full_name, "acme/stroke-kit");
    }

    #[test]
    fn evaluation_reason_invariant() {
        let report = EvaluationReport {
            candidate: "a/b".into(),
            core_functionality: "x".into(),
            has_complete_structure: true,
            fulfills_query: false,
            reason: " ".into(),
        };
        assert!(report.check().is_err());
    }
}
