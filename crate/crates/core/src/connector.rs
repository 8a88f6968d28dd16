//! Hosting-service REST client: repository metadata, readme, issues.
//!
//! All traffic goes through an [`HttpTransport`]; rate-limit responses are
//! retried with exponential backoff that honours `retry-after`, up to
//! [`RetryPolicy::max_retries`] times.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use url::Url;

use crate::error::{Error, Result};
use crate::fixture::{DEFAULT_API_BASE, DEFAULT_RAW_BASE};
use crate::http::{HttpRequest, HttpResponse, HttpTransport, Sleeper, ThreadSleeper, TokenBucket};
use crate::model::{IssueRecord, IssueState, RepositoryRef, ResourceDocument, SourceKind};

pub const DEFAULT_SYNC_LIMIT: usize = 20;
const MAX_PER_PAGE: usize = 100;

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConnectorConfig {
    pub api_base: String,
    pub raw_base: String,
    pub token: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl Default for ConnectorConfig {
    fn default() -> Self {
        ConnectorConfig {
            api_base: DEFAULT_API_BASE.into(),
            raw_base: DEFAULT_RAW_BASE.into(),
            token: None,
            timeout: Duration::from_secs(10),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    #[default]
    AllNew,
    ByIds,
    ByLabels,
    ByDateRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateFilter {
    #[default]
    Open,
    Closed,
    All,
}

impl StateFilter {
    fn as_str(self) -> &'static str {
        match self {
            StateFilter::Open => "open",
            StateFilter::Closed => "closed",
            StateFilter::All => "all",
        }
    }
}

fn default_limit() -> usize {
    DEFAULT_SYNC_LIMIT
}

/// What to pull from the issue tracker. Mode-specific fields must be set
/// exactly when the mode uses them; see [`SyncRequest::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncRequest {
    #[serde(default)]
    pub mode: SyncMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ids: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub since: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until: Option<DateTime<Utc>>,
    #[serde(default = "default_limit")]
    pub limit: usize,
    #[serde(default)]
    pub state: StateFilter,
}

impl Default for SyncRequest {
    fn default() -> Self {
        SyncRequest::all_new(DEFAULT_SYNC_LIMIT)
    }
}

impl SyncRequest {
    pub fn all_new(limit: usize) -> Self {
        SyncRequest {
            mode: SyncMode::AllNew,
            ids: Vec::new(),
            labels: Vec::new(),
            since: None,
            until: None,
            limit,
            state: StateFilter::Open,
        }
    }

    pub fn by_ids(ids: Vec<u64>) -> Self {
        let limit = ids.len().max(1);
        SyncRequest {
            mode: SyncMode::ByIds,
            ids,
            limit,
            ..SyncRequest::all_new(limit)
        }
    }

    pub fn by_labels(labels: Vec<String>, limit: usize) -> Self {
        SyncRequest {
            mode: SyncMode::ByLabels,
            labels,
            ..SyncRequest::all_new(limit)
        }
    }

    pub fn by_date_range(
        since: Option<DateTime<Utc>>,
        until: Option<DateTime<Utc>>,
        limit: usize,
    ) -> Self {
        SyncRequest {
            mode: SyncMode::ByDateRange,
            since,
            until,
            ..SyncRequest::all_new(limit)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.limit == 0 {
            return bad("limit must be at least 1");
        }
        let has_ids = !self.ids.is_empty();
        let has_labels = !self.labels.is_empty();
        let has_dates = self.since.is_some() || self.until.is_some();
        let (need_ids, need_labels, need_dates) = match self.mode {
            SyncMode::AllNew => (false, false, false),
            SyncMode::ByIds => (true, false, false),
            SyncMode::ByLabels => (false, true, false),
            SyncMode::ByDateRange => (false, false, true),
        };
        if has_ids != need_ids {
            return bad(if need_ids {
                "by_ids needs ids"
            } else {
                "ids only apply to by_ids"
            });
        }
        if has_labels != need_labels {
            return bad(if need_labels {
                "by_labels needs labels"
            } else {
                "labels only apply to by_labels"
            });
        }
        if has_dates != need_dates {
            return bad(if need_dates {
                "by_date_range needs since and/or until"
            } else {
                "since/until only apply to by_date_range"
            });
        }
        if self.ids.contains(&0) {
            return bad("issue numbers are positive");
        }
        if let (Some(s), Some(u)) = (self.since, self.until) {
            if s > u {
                return bad("since is after until");
            }
        }
        Ok(())
    }
}

/// `https://<host>/<owner>/<name>[/...]` split into its parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoUrl {
    pub host: String,
    pub owner: String,
    pub name: String,
}

pub fn parse_repo_url(input: &str) -> Result<RepoUrl> {
    let malformed = || Error::MalformedUrl(input.to_string());
    let url = Url::parse(input.trim()).map_err(|_| malformed())?;
    if !matches!(url.scheme(), "http" | "https") {
        return Err(malformed());
    }
    let host = url.host_str().ok_or_else(malformed)?;
    let mut segs = url
        .path_segments()
        .ok_or_else(malformed)?
        .filter(|s| !s.is_empty());
    let owner = segs.next().ok_or_else(malformed)?;
    let name = segs.next().ok_or_else(malformed)?;
    let name = name.strip_suffix(".git").unwrap_or(name);
    let valid = |s: &str| {
        !s.is_empty()
            && s.chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
    };
    if !valid(owner) || !valid(name) {
        return Err(malformed());
    }
    let mut base = format!("{}://{}", url.scheme(), host);
    if let Some(port) = url.port() {
        base.push_str(&format!(":{port}"));
    }
    Ok(RepoUrl {
        host: base,
        owner: owner.to_string(),
        name: name.to_string(),
    })
}

pub struct RepoConnector {
    transport: Arc<dyn HttpTransport>,
    config: ConnectorConfig,
    budget: Arc<TokenBucket>,
    sleeper: Arc<dyn Sleeper>,
}

impl RepoConnector {
    pub fn new(transport: Arc<dyn HttpTransport>, config: ConnectorConfig) -> Self {
        RepoConnector {
            transport,
            config,
            budget: Arc::new(TokenBucket::default()),
            sleeper: Arc::new(ThreadSleeper),
        }
    }

    pub fn with_budget(mut self, budget: Arc<TokenBucket>) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn config(&self) -> &ConnectorConfig {
        &self.config
    }

    pub fn transport(&self) -> &Arc<dyn HttpTransport> {
        &self.transport
    }

    fn api_url(&self, owner: &str, name: &str, tail: &str) -> String {
        format!("{}/repos/{owner}/{name}{tail}", self.config.api_base)
    }

    fn api_request(&self, url: String, accept: &str) -> HttpRequest {
        let mut req = HttpRequest::get(url)
            .header("accept", accept)
            .timeout(self.config.timeout);
        if let Some(token) = &self.config.token {
            req = req.header("authorization", format!("Bearer {token}"));
        }
        req
    }

    /// Sends a request through the shared budget, retrying rate-limit
    /// responses. Other statuses are returned as-is.
    pub fn send(&self, request: &HttpRequest) -> Result<HttpResponse> {
        let policy = &self.config.retry;
        let mut attempt = 0u32;
        loop {
            self.budget.acquire(self.sleeper.as_ref());
            let resp = self.transport.send(request)?;
            if !is_rate_limited(&resp) {
                return Ok(resp);
            }
            let retry_after = resp
                .header("retry-after")
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            if attempt >= policy.max_retries {
                return Err(Error::RateLimited { retry_after });
            }
            let backoff = policy.base_delay.saturating_mul(1 << attempt);
            let delay = retry_after
                .unwrap_or_default()
                .max(backoff)
                .min(policy.max_delay);
            tracing::warn!(url = %request.url, ?delay, attempt, "rate limited; backing off");
            self.sleeper.sleep(delay);
            attempt += 1;
        }
    }

    fn get_json(&self, url: String) -> Result<Value> {
        let resp = self.send(&self.api_request(url.clone(), "application/vnd.github+json"))?;
        match resp.status {
            200..=299 => serde_json::from_str(&resp.body)
                .map_err(|e| Error::HostResponse(format!("{url}: {e}"))),
            404 => Err(Error::NotFound(url)),
            s => Err(Error::HostResponse(format!("{url}: status {s}"))),
        }
    }

    pub fn fetch_repo(&self, url: &str) -> Result<RepositoryRef> {
        let parsed = parse_repo_url(url)?;
        let v = self.get_json(self.api_url(&parsed.owner, &parsed.name, ""))?;
        let count = |k: &str| v[k].as_u64().unwrap_or(0);
        Ok(RepositoryRef {
            host: parsed.host,
            owner: v["owner"]["login"]
                .as_str()
                .unwrap_or(&parsed.owner)
                .to_string(),
            name: v["name"].as_str().unwrap_or(&parsed.name).to_string(),
            stars: count("stargazers_count"),
            forks: count("forks_count"),
            open_issue_count: count("open_issues_count"),
            default_branch: v["default_branch"].as_str().unwrap_or("main").to_string(),
        })
    }

    /// Raw readme text through the host's readme endpoint, whatever its
    /// format.
    pub fn fetch_readme(&self, repo: &RepositoryRef) -> Result<ResourceDocument> {
        let url = self.api_url(&repo.owner, &repo.name, "/readme");
        let resp = self.send(&self.api_request(url.clone(), "application/vnd.github.raw"))?;
        match resp.status {
            200..=299 => Ok(ResourceDocument {
                source_kind: SourceKind::Readme,
                locator: "README".into(),
                expected_content: "project readme".into(),
                user_relevance: String::new(),
                priority: 5,
                content_text: resp.body,
                fetched_at: Utc::now(),
            }),
            404 => Err(Error::NoReadme),
            s => Err(Error::HostResponse(format!("{url}: status {s}"))),
        }
    }

    /// A repository file from the default branch's raw-content endpoint.
    pub fn fetch_raw_file(&self, repo: &RepositoryRef, path: &str) -> Result<String> {
        let url = format!(
            "{}/{}/{}/{}/{}",
            self.config.raw_base,
            repo.owner,
            repo.name,
            repo.default_branch,
            path.trim_start_matches("./").trim_start_matches('/')
        );
        let resp = self.send(&HttpRequest::get(url.clone()).timeout(self.config.timeout))?;
        match resp.status {
            200..=299 => Ok(resp.body),
            404 => Err(Error::NotFound(url)),
            s => Err(Error::HostResponse(format!("{url}: status {s}"))),
        }
    }

    /// Issues matching `request`, newest first, at most `request.limit`.
    /// Pull requests are skipped; comments are never fetched.
    pub fn fetch_issues(
        &self,
        repo: &RepositoryRef,
        request: &SyncRequest,
    ) -> Result<Vec<IssueRecord>> {
        request.validate()?;
        let now = Utc::now();
        let mut out = Vec::new();
        if request.mode == SyncMode::ByIds {
            let ids: BTreeSet<u64> = request.ids.iter().copied().collect();
            for n in ids {
                match self.get_json(self.api_url(&repo.owner, &repo.name, &format!("/issues/{n}")))
                {
                    Ok(v) => {
                        if let Some(issue) = issue_from_json(&v, now)? {
                            out.push(issue);
                        }
                    }
                    Err(Error::NotFound(_)) => {
                        tracing::warn!(issue = n, "requested issue not found; skipping");
                    }
                    Err(e) => return Err(e),
                }
            }
            out.sort_by(|a, b| {
                b.created_at
                    .cmp(&a.created_at)
                    .then(b.number.cmp(&a.number))
            });
            out.truncate(request.limit);
            return Ok(out);
        }

        let per_page = request.limit.min(MAX_PER_PAGE);
        let mut page = 1;
        'pages: loop {
            let mut url = Url::parse(&self.api_url(&repo.owner, &repo.name, "/issues"))
                .map_err(|e| Error::HostResponse(e.to_string()))?;
            {
                let mut q = url.query_pairs_mut();
                q.append_pair("state", request.state.as_str())
                    .append_pair("sort", "created")
                    .append_pair("direction", "desc")
                    .append_pair("per_page", &per_page.to_string())
                    .append_pair("page", &page.to_string());
                if request.mode == SyncMode::ByLabels {
                    q.append_pair("labels", &request.labels.join(","));
                }
                if let Some(since) = request.since {
                    // `since` filters on update time upstream, a superset of
                    // created-after; the exact cut happens below.
                    q.append_pair("since", &since.to_rfc3339());
                }
            }
            let v = self.get_json(url.to_string())?;
            let items = v
                .as_array()
                .ok_or_else(|| Error::HostResponse("issue listing is not an array".into()))?;
            if items.is_empty() {
                break;
            }
            for item in items {
                let Some(issue) = issue_from_json(item, now)? else {
                    continue;
                };
                if let Some(since) = request.since {
                    if issue.created_at < since {
                        // Listing is newest-created first; nothing older qualifies.
                        break 'pages;
                    }
                }
                if let Some(until) = request.until {
                    if issue.created_at > until {
                        continue;
                    }
                }
                out.push(issue);
                if out.len() >= request.limit {
                    break 'pages;
                }
            }
            if items.len() < per_page {
                break;
            }
            page += 1;
        }
        out.sort_by(|a, b| {
            b.created_at
                .cmp(&a.created_at)
                .then(b.number.cmp(&a.number))
        });
        Ok(out)
    }
}

fn is_rate_limited(resp: &HttpResponse) -> bool {
    resp.status == 429
        || (resp.status == 403
            && (resp.header("retry-after").is_some()
                || resp.header("x-ratelimit-remaining") == Some("0")))
}

/// `None` for pull requests, which share the issue listing.
fn issue_from_json(v: &Value, synced_at: DateTime<Utc>) -> Result<Option<IssueRecord>> {
    if v.get("pull_request").is_some_and(|p| !p.is_null()) {
        return Ok(None);
    }
    let bad = |what: &str| Error::HostResponse(format!("issue object missing {what}"));
    let number = v["number"]
        .as_u64()
        .filter(|n| *n > 0)
        .ok_or_else(|| bad("number"))?;
    let ts = |k: &str| -> Result<DateTime<Utc>> {
        v[k].as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(k))
    };
    let state = match v["state"].as_str() {
        Some("closed") => IssueState::Closed,
        _ => IssueState::Open,
    };
    let labels = v["labels"]
        .as_array()
        .map(|ls| {
            ls.iter()
                .filter_map(|l| {
                    l["name"]
                        .as_str()
                        .or_else(|| l.as_str())
                        .map(str::to_string)
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(Some(IssueRecord {
        number,
        title: v["title"].as_str().unwrap_or_default().to_string(),
        body: v["body"].as_str().unwrap_or_default().to_string(),
        labels,
        state,
        created_at: ts("created_at")?,
        updated_at: ts("updated_at")?,
        synced_at,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{rate_limited, FixtureHost, RepoFixture};
    use crate::http::RecordingSleeper;
    use serde_json::json;

    fn issue(n: u64, day: u32, labels: &[&str], state: &str) -> Value {
        json!({
            "number": n,
            "title": format!("Issue {n}"),
            "body": "body",
            "labels": labels.iter().map(|l| json!({"name": l})).collect::<Vec<_>>(),
            "state": state,
            "created_at": format!("2024-01-{day:02}T00:00:00Z"),
            "updated_at": format!("2024-03-{day:02}T00:00:00Z"),
        })
    }

    fn host_with(issues: Vec<Value>) -> Arc<FixtureHost> {
        let mut host = FixtureHost::default();
        host.add_repo(RepoFixture {
            repo: json!({"owner": {"login": "acme"}, "name": "widgets", "stargazers_count": 5,
                         "forks_count": 2, "open_issues_count": 30, "default_branch": "main"}),
            readme: Some("# Widgets\n".into()),
            issues,
            files: Default::default(),
        });
        Arc::new(host)
    }

    fn connector(host: Arc<FixtureHost>) -> (RepoConnector, Arc<RecordingSleeper>) {
        let sleeper = Arc::new(RecordingSleeper::default());
        let c = RepoConnector::new(host, ConnectorConfig::default()).with_sleeper(sleeper.clone());
        (c, sleeper)
    }

    fn thirty() -> Vec<Value> {
        (1..=30).map(|n| issue(n, n as u32, &[], "open")).collect()
    }

    #[test]
    fn parses_repo_urls() {
        let u = parse_repo_url("https://github.com/excalidraw/excalidraw").unwrap();
        assert_eq!(
            (u.owner.as_str(), u.name.as_str()),
            ("excalidraw", "excalidraw")
        );
        assert_eq!(u.host, "https://github.com");
        let u = parse_repo_url("https://example.org/a/b.git/tree/main").unwrap();
        assert_eq!(u.name, "b");
        assert!(matches!(
            parse_repo_url("not a url"),
            Err(Error::MalformedUrl(_))
        ));
        assert!(matches!(
            parse_repo_url("https://example.org/owner-only"),
            Err(Error::MalformedUrl(_))
        ));
        assert!(matches!(
            parse_repo_url("ftp://x.org/a/b"),
            Err(Error::MalformedUrl(_))
        ));
    }

    #[test]
    fn fetches_metadata_and_readme() {
        let (c, _) = connector(host_with(vec![]));
        let r = c.fetch_repo("https://github.com/acme/widgets").unwrap();
        assert_eq!((r.stars, r.forks, r.open_issue_count), (5, 2, 30));
        let readme = c.fetch_readme(&r).unwrap();
        assert_eq!(readme.content_text, "# Widgets\n");
        assert!(matches!(
            c.fetch_repo("https://github.com/acme/missing"),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn default_sync_returns_newest_twenty() {
        let (c, _) = connector(host_with(thirty()));
        let r = c.fetch_repo("https://github.com/acme/widgets").unwrap();
        let got = c.fetch_issues(&r, &SyncRequest::default()).unwrap();
        assert_eq!(got.len(), 20);
        assert!(got.windows(2).all(|w| w[0].created_at >= w[1].created_at));
        let got: Vec<u64> = got.iter().map(|i| i.number).collect();
        assert_eq!(got, (11..=30).rev().collect::<Vec<_>>());
    }

    #[test]
    fn pagination_completeness() {
        let (c, _) = connector(host_with(thirty()));
        let r = c.fetch_repo("https://github.com/acme/widgets").unwrap();
        for limit in [1, 7, 30, 31, 150] {
            let got = c.fetch_issues(&r, &SyncRequest::all_new(limit)).unwrap();
            assert_eq!(got.len(), limit.min(30), "limit {limit}");
        }
        // 250 issues force several pages at per_page=100
        let many: Vec<Value> = (1..=250).map(|n| issue(n, 1, &[], "open")).collect();
        let (c, _) = connector(host_with(many));
        let got = c.fetch_issues(&r, &SyncRequest::all_new(240)).unwrap();
        assert_eq!(got.len(), 240);
    }

    #[test]
    fn modes_filter_correctly() {
        let issues = vec![
            issue(1, 1, &["bug"], "open"),
            issue(2, 2, &["bug", "ui"], "open"),
            issue(3, 3, &["docs"], "closed"),
            issue(4, 4, &[], "open"),
            json!({"number": 5, "title": "PR", "state": "open", "pull_request": {},
                   "created_at": "2024-01-05T00:00:00Z", "updated_at": "2024-01-05T00:00:00Z"}),
        ];
        let (c, _) = connector(host_with(issues));
        let r = c.fetch_repo("https://github.com/acme/widgets").unwrap();
        let nums = |req: SyncRequest| -> Vec<u64> {
            c.fetch_issues(&r, &req)
                .unwrap()
                .iter()
                .map(|i| i.number)
                .collect()
        };
        assert_eq!(nums(SyncRequest::default()), vec![4, 2, 1]);
        assert_eq!(
            nums(SyncRequest::by_labels(vec!["bug".into()], 20)),
            vec![2, 1]
        );
        assert_eq!(nums(SyncRequest::by_ids(vec![3, 99, 5])), vec![3]);
        let since = "2024-01-02T00:00:00Z".parse().ok();
        let until = "2024-01-03T12:00:00Z".parse().ok();
        let mut req = SyncRequest::by_date_range(since, until, 20);
        req.state = StateFilter::All;
        assert_eq!(nums(req), vec![3, 2]);
        let late = "2030-01-01T00:00:00Z".parse().ok();
        assert!(nums(SyncRequest::by_date_range(late, None, 20)).is_empty());
    }

    #[test]
    fn request_validation() {
        assert!(SyncRequest::default().validate().is_ok());
        let r = SyncRequest {
            ids: vec![1],
            ..SyncRequest::default()
        };
        assert!(r.validate().is_err());
        assert!(SyncRequest::by_ids(vec![]).validate().is_err());
        assert!(SyncRequest::by_labels(vec![], 5).validate().is_err());
        assert!(SyncRequest::by_date_range(None, None, 5)
            .validate()
            .is_err());
        assert!(SyncRequest::all_new(0).validate().is_err());
        let r: SyncRequest = serde_json::from_str(r#"{"mode":"by_ids","ids":[103]}"#).unwrap();
        assert_eq!(r.limit, 20);
        assert!(r.validate().is_ok());
    }

    #[test]
    fn rate_limit_backoff_honours_retry_after() {
        let host = host_with(vec![]);
        host.inject_fault(
            DEFAULT_API_BASE,
            2,
            Some(rate_limited(Duration::from_secs(7))),
        );
        let (c, sleeper) = connector(host.clone());
        let r = c.fetch_repo("https://github.com/acme/widgets").unwrap();
        assert_eq!(r.stars, 5);
        assert_eq!(
            sleeper.slept(),
            vec![Duration::from_secs(7), Duration::from_secs(7)]
        );

        host.inject_fault(DEFAULT_API_BASE, 10, Some(HttpResponse::new(429, "")));
        let err = c.fetch_repo("https://github.com/acme/widgets").unwrap_err();
        assert!(matches!(err, Error::RateLimited { retry_after: None }));
        // three retries with exponential backoff 1s, 2s, 4s
        assert_eq!(
            sleeper.slept()[2..],
            [
                Duration::from_secs(1),
                Duration::from_secs(2),
                Duration::from_secs(4)
            ]
        );
    }
}
