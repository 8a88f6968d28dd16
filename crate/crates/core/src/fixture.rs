//! In-process stand-in for the hosting service and the web.
//!
//! [`FixtureHost`] answers the same REST paths as the real hosting API
//! (repository metadata, raw readme, paginated issue listing, single issue),
//! the raw-content endpoint for repository files, and arbitrary web pages.
//! Fixtures live on disk as a directory per repository:
//!
//! ```text
//! host.json      {"repo": {...}, "readme": "README.md", "issues": "issues.json",
//!                 "files": {"docs/x.md": "files/x.md"}, "pages": {"https://..": "pages/a.html"}}
//! README.md
//! issues.json    hosting-API shaped issue objects
//! script.json    scripted model answers the `llm/` fixtures are recorded from
//! llm/           provider fixtures, see `provider::MockProvider`
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::Deserialize;
use serde_json::Value;
use url::Url;

use crate::error::{Error, Result};
use crate::http::{HttpRequest, HttpResponse, HttpTransport};
use crate::prompts::Stage;
use crate::provider::{MockProvider, ScriptedProvider};

pub const DEFAULT_API_BASE: &str = "https://api.github.com";
pub const DEFAULT_RAW_BASE: &str = "https://raw.githubusercontent.com";

#[derive(Debug, Clone, Default)]
pub struct RepoFixture {
    /// Hosting-API repository object (`owner.login`, `name`, `stargazers_count`, ...).
    pub repo: Value,
    pub readme: Option<String>,
    /// Hosting-API issue objects.
    pub issues: Vec<Value>,
    /// Repository files by repo-relative path, served from the raw endpoint.
    pub files: BTreeMap<String, String>,
}

impl RepoFixture {
    fn key(&self) -> (String, String) {
        let owner = self.repo["owner"]["login"].as_str().unwrap_or_default();
        let name = self.repo["name"].as_str().unwrap_or_default();
        (owner.to_ascii_lowercase(), name.to_ascii_lowercase())
    }

    fn default_branch(&self) -> &str {
        self.repo["default_branch"].as_str().unwrap_or("main")
    }
}

#[derive(Debug, Clone)]
struct Fault {
    url_prefix: String,
    remaining: usize,
    response: Option<HttpResponse>,
}

#[derive(Deserialize)]
struct HostManifest {
    repo: Value,
    #[serde(default)]
    readme: Option<String>,
    #[serde(default)]
    issues: Option<String>,
    #[serde(default)]
    files: BTreeMap<String, String>,
    #[serde(default)]
    pages: BTreeMap<String, String>,
}

pub struct FixtureHost {
    api_base: String,
    raw_base: String,
    repos: HashMap<(String, String), RepoFixture>,
    pages: HashMap<String, String>,
    faults: Mutex<Vec<Fault>>,
    log: Mutex<Vec<String>>,
}

impl Default for FixtureHost {
    fn default() -> Self {
        FixtureHost::new(DEFAULT_API_BASE, DEFAULT_RAW_BASE)
    }
}

impl FixtureHost {
    pub fn new(api_base: &str, raw_base: &str) -> Self {
        FixtureHost {
            api_base: api_base.trim_end_matches('/').to_string(),
            raw_base: raw_base.trim_end_matches('/').to_string(),
            repos: HashMap::new(),
            pages: HashMap::new(),
            faults: Mutex::new(Vec::new()),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn add_repo(&mut self, fixture: RepoFixture) -> &mut Self {
        self.repos.insert(fixture.key(), fixture);
        self
    }

    pub fn add_page(&mut self, url: &str, html: impl Into<String>) -> &mut Self {
        self.pages.insert(normalize_page_url(url), html.into());
        self
    }

    /// Loads one repository fixture directory (see module docs).
    pub fn load_dir(&mut self, dir: &Path) -> Result<&mut Self> {
        let manifest: HostManifest = serde_json::from_str(&read(&dir.join("host.json"))?)
            .map_err(|e| Error::Storage(format!("{}: {e}", dir.join("host.json").display())))?;
        let readme = manifest.readme.map(|f| read(&dir.join(f))).transpose()?;
        let issues = match manifest.issues {
            Some(f) => serde_json::from_str(&read(&dir.join(&f))?)
                .map_err(|e| Error::Storage(format!("{f}: {e}")))?,
            None => Vec::new(),
        };
        let mut files = BTreeMap::new();
        for (path, file) in manifest.files {
            files.insert(path, read(&dir.join(file))?);
        }
        for (url, file) in manifest.pages {
            let body = read(&dir.join(file))?;
            self.add_page(&url, body);
        }
        self.add_repo(RepoFixture {
            repo: manifest.repo,
            readme,
            issues,
            files,
        });
        Ok(self)
    }

    /// Serves `response` (or a transport error when `None`) for the next
    /// `times` requests whose URL starts with `url_prefix`.
    pub fn inject_fault(&self, url_prefix: &str, times: usize, response: Option<HttpResponse>) {
        self.faults.lock().unwrap().push(Fault {
            url_prefix: url_prefix.to_string(),
            remaining: times,
            response,
        });
    }

    /// Every URL requested so far, in order.
    pub fn requests(&self) -> Vec<String> {
        self.log.lock().unwrap().clone()
    }

    fn route(&self, url: &Url) -> HttpResponse {
        let full = url.as_str();
        if let Some(rest) = full.strip_prefix(&format!("{}/repos/", self.api_base)) {
            let path = rest.split(['?', '#']).next().unwrap_or_default();
            let segs: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
            return self.route_api(&segs, url);
        }
        if let Some(rest) = full.strip_prefix(&format!("{}/", self.raw_base)) {
            let mut parts = rest.splitn(4, '/');
            let (owner, name, branch, path) = (
                parts.next().unwrap_or_default(),
                parts.next().unwrap_or_default(),
                parts.next().unwrap_or_default(),
                parts.next().unwrap_or_default(),
            );
            return match self.repo(owner, name) {
                Some(r) if r.default_branch() == branch => {
                    let path = percent_decode(path);
                    match r.files.get(&path) {
                        Some(text) => HttpResponse::new(200, text.clone()),
                        None => not_found(),
                    }
                }
                _ => not_found(),
            };
        }
        match self.pages.get(&normalize_page_url(full)) {
            Some(html) => {
                HttpResponse::new(200, html.clone()).with_header("content-type", "text/html")
            }
            None => not_found(),
        }
    }

    fn repo(&self, owner: &str, name: &str) -> Option<&RepoFixture> {
        self.repos
            .get(&(owner.to_ascii_lowercase(), name.to_ascii_lowercase()))
    }

    fn route_api(&self, segs: &[&str], url: &Url) -> HttpResponse {
        let Some(repo) = segs.get(..2).and_then(|s| self.repo(s[0], s[1])) else {
            return not_found();
        };
        match &segs[2..] {
            [] => json(&repo.repo),
            ["readme"] => match &repo.readme {
                Some(text) => HttpResponse::new(200, text.clone()),
                None => not_found(),
            },
            ["issues"] => list_issues(repo, url),
            ["issues", n] => {
                let found = n
                    .parse::<u64>()
                    .ok()
                    .and_then(|n| repo.issues.iter().find(|i| i["number"].as_u64() == Some(n)));
                match found {
                    Some(issue) => json(issue),
                    None => not_found(),
                }
            }
            _ => not_found(),
        }
    }
}

impl HttpTransport for FixtureHost {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse> {
        self.log.lock().unwrap().push(request.url.clone());
        {
            let mut faults = self.faults.lock().unwrap();
            if let Some(f) = faults
                .iter_mut()
                .find(|f| f.remaining > 0 && request.url.starts_with(&f.url_prefix))
            {
                f.remaining -= 1;
                return match &f.response {
                    Some(r) => Ok(r.clone()),
                    None => Err(Error::Transport(format!(
                        "injected failure for {}",
                        request.url
                    ))),
                };
            }
        }
        let url = Url::parse(&request.url).map_err(|e| Error::Transport(e.to_string()))?;
        Ok(self.route(&url))
    }
}

/// Model answers for one fixture repository, keyed by stage and, for issue
/// mapping, by issue title. The recorder replays the repository through the
/// engine with these answers and saves every prompt/answer pair as a keyed
/// provider fixture.
#[derive(Debug, Clone, Deserialize)]
pub struct Script {
    pub url: String,
    pub persona_count: usize,
    pub stages: BTreeMap<Stage, Value>,
    #[serde(default)]
    pub issues: BTreeMap<String, Value>,
    #[serde(default)]
    pub generate_more: Option<ScriptedGeneration>,
    #[serde(default)]
    pub merges: Vec<ScriptedMerge>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ScriptedGeneration {
    pub count: usize,
    pub response: Value,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ScriptedMerge {
    /// 1-based positions among the active personas after generation.
    pub personas: Vec<usize>,
    #[serde(default)]
    pub guidance: Option<String>,
    pub response: Value,
}

impl Script {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("script.json");
        serde_json::from_str(&read(&path)?)
            .map_err(|e| Error::Storage(format!("{}: {e}", path.display())))
    }

    /// A provider answering the generation chain and issue mapping.
    pub fn provider(&self) -> ScriptedProvider {
        let mut p = ScriptedProvider::new();
        for (stage, v) in &self.stages {
            p = p.stage(*stage, v.to_string());
        }
        for (title, v) in &self.issues {
            p = p.issue(title.clone(), v.to_string());
        }
        p
    }
}

/// Fixture repositories shipped with this crate.
pub fn bundled_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Loads one fixture repository directory, or every repository directory
/// (those holding a `host.json`) directly under `root`, into one host and
/// one mock provider.
pub fn load_offline(root: &Path) -> Result<(FixtureHost, MockProvider)> {
    let dirs: Vec<PathBuf> = if root.join("host.json").exists() {
        vec![root.to_path_buf()]
    } else {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
            .map_err(|e| Error::Storage(format!("{}: {e}", root.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("host.json").exists())
            .collect();
        dirs.sort();
        dirs
    };
    if dirs.is_empty() {
        return Err(Error::Storage(format!(
            "no fixture repositories under {}",
            root.display()
        )));
    }
    let mut host = FixtureHost::default();
    let mut provider = MockProvider::new();
    for dir in dirs {
        host.load_dir(&dir)?;
        for f in MockProvider::from_dir(&dir.join("llm"))?.into_fixtures() {
            provider.insert(f);
        }
    }
    Ok((host, provider))
}

fn list_issues(repo: &RepoFixture, url: &Url) -> HttpResponse {
    let q: HashMap<String, String> = url.query_pairs().into_owned().collect();
    let state = q.get("state").map(String::as_str).unwrap_or("open");
    let labels: Vec<&str> = q
        .get("labels")
        .map(|l| l.split(',').filter(|s| !s.is_empty()).collect())
        .unwrap_or_default();
    let since: Option<DateTime<Utc>> = q.get("since").and_then(|s| s.parse().ok());
    let sort_key = if q.get("sort").map(String::as_str) == Some("updated") {
        "updated_at"
    } else {
        "created_at"
    };
    let ascending = q.get("direction").map(String::as_str) == Some("asc");
    let per_page = q
        .get("per_page")
        .and_then(|p| p.parse::<usize>().ok())
        .unwrap_or(30)
        .clamp(1, 100);
    let page = q
        .get("page")
        .and_then(|p| p.parse::<usize>().ok())
        .unwrap_or(1)
        .max(1);

    let ts = |v: &Value, key: &str| -> Option<DateTime<Utc>> { v[key].as_str()?.parse().ok() };
    let mut matching: Vec<&Value> = repo
        .issues
        .iter()
        .filter(|i| state == "all" || i["state"].as_str() == Some(state))
        .filter(|i| {
            labels.iter().all(|want| {
                i["labels"]
                    .as_array()
                    .map(|ls| ls.iter().any(|l| l["name"].as_str() == Some(want)))
                    .unwrap_or(false)
            })
        })
        .filter(|i| match since {
            Some(s) => ts(i, "updated_at").is_some_and(|u| u >= s),
            None => true,
        })
        .collect();
    matching.sort_by(|a, b| {
        let ord = ts(a, sort_key).cmp(&ts(b, sort_key));
        if ascending {
            ord
        } else {
            ord.reverse()
        }
    });
    let page_items: Vec<Value> = matching
        .into_iter()
        .skip((page - 1) * per_page)
        .take(per_page)
        .cloned()
        .collect();
    json(&Value::Array(page_items))
}

fn json(v: &Value) -> HttpResponse {
    HttpResponse::new(200, v.to_string()).with_header("content-type", "application/json")
}

fn not_found() -> HttpResponse {
    HttpResponse::new(404, r#"{"message":"Not Found"}"#)
}

/// A rate-limit response in the hosting API's shape.
pub fn rate_limited(retry_after: Duration) -> HttpResponse {
    HttpResponse::new(403, r#"{"message":"API rate limit exceeded"}"#)
        .with_header("retry-after", retry_after.as_secs().to_string())
        .with_header("x-ratelimit-remaining", "0")
}

fn normalize_page_url(url: &str) -> String {
    match Url::parse(url) {
        Ok(u) => u.as_str().trim_end_matches('/').to_string(),
        Err(_) => url.trim_end_matches('/').to_string(),
    }
}

fn percent_decode(s: &str) -> String {
    url::form_urlencoded::parse(format!("x={}", s.replace('+', "%2B")).as_bytes())
        .next()
        .map(|(_, v)| v.into_owned())
        .unwrap_or_else(|| s.to_string())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Storage(format!("{}: {e}", path.display())))
}
