//! Issue-tracker access for bug descriptions.

use std::fs;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ForgeError {
    #[error("issue request failed: {0}")]
    Http(String),
    #[error("malformed issue response: {0}")]
    Decode(String),
    #[error("issue cache: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RepoSlug {
    pub owner: String,
    pub name: String,
}

impl RepoSlug {
    pub fn new(owner: &str, name: &str) -> Self {
        RepoSlug { owner: owner.to_string(), name: name.to_string() }
    }

    /// Parse `https://host/owner/name(.git)` or `git@host:owner/name.git`.
    pub fn from_url(url: &str) -> Option<Self> {
        let trimmed = url.trim().trim_end_matches('/');
        let trimmed = trimmed.strip_suffix(".git").unwrap_or(trimmed);
        let path = match trimmed.split_once("://") {
            Some((_, rest)) => rest.split_once('/')?.1,
            None => trimmed.split_once(':')?.1,
        };
        let mut parts = path.rsplitn(3, '/');
        let name = parts.next()?;
        let owner = parts.next()?;
        (!owner.is_empty() && !name.is_empty()).then(|| RepoSlug::new(owner, name))
    }
}

impl std::fmt::Display for RepoSlug {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.owner, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub title: String,
    #[serde(default)]
    pub body: Option<String>,
}

pub trait IssueForge: Send + Sync {
    fn fetch_issue(&self, repo: &RepoSlug, number: u64) -> Result<Issue, ForgeError>;
}

/// GitHub REST client with an optional on-disk response cache.
pub struct GithubForge {
    api_base: String,
    token: Option<String>,
    cache_dir: Option<PathBuf>,
    agent: ureq::Agent,
}

pub const DEFAULT_TOKEN_ENV: &str = "GITHUB_TOKEN";

impl GithubForge {
    pub fn new(api_base: impl Into<String>) -> Self {
        GithubForge {
            api_base: api_base.into().trim_end_matches('/').to_string(),
            token: None,
            cache_dir: None,
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build(),
        }
    }

    /// Client for api.github.com authenticated from `$GITHUB_TOKEN` when set.
    pub fn from_env() -> Self {
        GithubForge::new("https://api.github.com").with_token(std::env::var(DEFAULT_TOKEN_ENV).ok())
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token.filter(|t| !t.is_empty());
        self
    }

    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    fn cache_path(&self, repo: &RepoSlug, number: u64) -> Option<PathBuf> {
        self.cache_dir
            .as_ref()
            .map(|d| d.join(format!("{}__{}__{number}.json", repo.owner, repo.name)))
    }
}

impl IssueForge for GithubForge {
    fn fetch_issue(&self, repo: &RepoSlug, number: u64) -> Result<Issue, ForgeError> {
        let cache = self.cache_path(repo, number);
        if let Some(text) = cache.as_ref().and_then(|p| fs::read_to_string(p).ok()) {
            if let Ok(issue) = serde_json::from_str(&text) {
                return Ok(issue);
            }
        }
        let url = format!("{}/repos/{}/{}/issues/{number}", self.api_base, repo.owner, repo.name);
        let mut req = self
            .agent
            .get(&url)
            .set("Accept", "application/vnd.github+json")
            .set("User-Agent", "hafix");
        if let Some(token) = &self.token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let resp = req.call().map_err(|e| ForgeError::Http(e.to_string()))?;
        let issue: Issue = resp.into_json().map_err(|e| ForgeError::Decode(e.to_string()))?;
        if let Some(path) = cache {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, serde_json::to_string(&issue).expect("issue serializes"))?;
        }
        Ok(issue)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Issue,
    CommitMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinedDescription {
    pub text: String,
    pub provenance: Provenance,
    pub issue: Option<u64>,
    /// Set when an issue was referenced but could not be fetched.
    pub warning: Option<String>,
}

fn issue_url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"https?://[^/\s]+/([\w.-]+)/([\w.-]+)/(?:issues|pull)/(\d+)").unwrap())
}

fn issue_hash_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|[^\w&/])#(\d+)\b").unwrap())
}

/// First issue referenced by a commit message: a full issue URL wins over `#N`.
pub fn find_issue_reference(message: &str, default_repo: &RepoSlug) -> Option<(RepoSlug, u64)> {
    if let Some(c) = issue_url_re().captures(message) {
        let n = c[3].parse().ok()?;
        return Some((RepoSlug::new(&c[1], &c[2]), n));
    }
    let c = issue_hash_re().captures(message)?;
    Some((default_repo.clone(), c[1].parse().ok()?))
}

/// Issue title and body when the message references an issue, else the message itself.
pub fn mine_bug_description(
    commit_message: &str,
    default_repo: &RepoSlug,
    forge: Option<&dyn IssueForge>,
) -> MinedDescription {
    let fallback = |warning: Option<String>| MinedDescription {
        text: commit_message.to_string(),
        provenance: Provenance::CommitMessage,
        issue: None,
        warning,
    };
    let Some((repo, number)) = find_issue_reference(commit_message, default_repo) else {
        return fallback(None);
    };
    let Some(forge) = forge else {
        return fallback(Some(format!("issue {repo}#{number} referenced but no forge client configured")));
    };
    match forge.fetch_issue(&repo, number) {
        Ok(issue) => MinedDescription {
            text: format!("{}\n\n{}", issue.title, issue.body.unwrap_or_default()),
            provenance: Provenance::Issue,
            issue: Some(number),
            warning: None,
        },
        Err(e) => {
            log::warn!("falling back to commit message for {repo}#{number}: {e}");
            fallback(Some(e.to_string()))
        }
    }
}
