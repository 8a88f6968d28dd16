//! The two ways the CLI reaches an engine: embedded in this process, or a
//! running API server over HTTP. Both return the core types so rendering
//! does not care which one answered.

use std::sync::Arc;
use std::time::Duration;

use personaflow_core::connector::{ConnectorConfig, SyncRequest};
use personaflow_core::fixture::load_offline;
use personaflow_core::http::{HttpTransport, ReqwestTransport};
use personaflow_core::jobs::{FailureClass, JobSnapshot};
use personaflow_core::model::{AnalyticsSummary, MappingStatus, PersonaId, PersonaProfile, RepoId};
use personaflow_core::personas::PersonaPatch;
use personaflow_core::provider::{
    ChatConfig, ChatImageProvider, ChatProvider, LlmClient, StubImageProvider,
};
use personaflow_core::service::{
    Engine, EngineConfig, GenerationRequest, IssueDetail, IssueListing, IssueQuery, PersonaView,
    RepoSummary,
};
use personaflow_core::store::Store;
use personaflow_core::{Error, ErrorClass};
use personaflow_server::ErrorBody;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::{LocalOptions, ProviderKind};

/// Exit code and message for a failed command.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_REMOTE: i32 = 3;
pub const EXIT_PROVIDER: i32 = 4;
pub const EXIT_INTERNAL: i32 = 1;

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Validation | ErrorClass::NotFound | ErrorClass::Conflict => EXIT_VALIDATION,
        ErrorClass::Upstream => EXIT_REMOTE,
        ErrorClass::Provider => EXIT_PROVIDER,
        ErrorClass::Internal => EXIT_INTERNAL,
    }
}

pub fn job_exit_code(class: Option<FailureClass>) -> i32 {
    match class {
        Some(FailureClass::Validation | FailureClass::NotFound | FailureClass::Conflict) => {
            EXIT_VALIDATION
        }
        Some(FailureClass::Upstream) => EXIT_REMOTE,
        Some(FailureClass::Provider) => EXIT_PROVIDER,
        Some(FailureClass::Internal) | None => EXIT_INTERNAL,
    }
}

impl Failure {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Failure::new(EXIT_VALIDATION, message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(exit_code(e.class()), e.to_string())
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub enum Backend {
    Local(Engine),
    Remote(Remote),
}

impl Backend {
    pub fn local(opts: &LocalOptions) -> CliResult<Self> {
        Ok(Backend::Local(local_engine(opts)?))
    }

    pub fn remote(base: &str) -> CliResult<Self> {
        Ok(Backend::Remote(Remote::new(base)?))
    }

    pub fn is_local(&self) -> bool {
        matches!(self, Backend::Local(_))
    }

    /// Interval between status polls while waiting on a job.
    pub fn poll_interval(&self) -> Duration {
        match self {
            Backend::Local(_) => Duration::from_millis(20),
            Backend::Remote(_) => Duration::from_secs(1),
        }
    }

    pub fn submit_generation(&self, req: GenerationRequest) -> CliResult<String> {
        match self {
            Backend::Local(e) => Ok(e.submit_generation(req)?),
            Backend::Remote(r) => r.job_id(r.send("POST", "/repos", Some(json!(req)), None)?),
        }
    }

    pub fn job(&self, id: &str) -> CliResult<JobSnapshot> {
        match self {
            Backend::Local(e) => Ok(e.job_status(id)?),
            Backend::Remote(r) => r.get(&format!("/jobs/{id}")),
        }
    }

    pub fn jobs(&self) -> CliResult<Vec<JobSnapshot>> {
        match self {
            Backend::Local(e) => Ok(e.jobs()),
            Backend::Remote(r) => r.get("/jobs"),
        }
    }

    pub fn repos(&self) -> CliResult<Vec<RepoSummary>> {
        match self {
            Backend::Local(e) => Ok(e.repos()),
            Backend::Remote(r) => r.get("/repos"),
        }
    }

    pub fn personas(&self, repo: &RepoId, include_archived: bool) -> CliResult<Vec<PersonaView>> {
        match self {
            Backend::Local(e) => Ok(e.personas(repo, include_archived)?),
            Backend::Remote(r) => r.get(&format!(
                "/repos/{repo}/personas?include_archived={include_archived}"
            )),
        }
    }

    pub fn persona(&self, id: &PersonaId) -> CliResult<PersonaView> {
        match self {
            Backend::Local(e) => Ok(e.persona(id)?),
            Backend::Remote(r) => r.get(&format!("/personas/{id}")),
        }
    }

    pub fn edit_persona(
        &self,
        id: &PersonaId,
        patch: Value,
        version: Option<u64>,
    ) -> CliResult<PersonaView> {
        match self {
            Backend::Local(e) => {
                let patch = PersonaPatch::from_json(patch)?;
                Ok(e.edit_persona(id, &patch, version)?)
            }
            Backend::Remote(r) => {
                r.parse(r.send("PUT", &format!("/personas/{id}"), Some(patch), version)?)
            }
        }
    }

    pub fn archive_persona(&self, id: &PersonaId, version: Option<u64>) -> CliResult<PersonaView> {
        match self {
            Backend::Local(e) => Ok(e.archive_persona(id, version)?),
            Backend::Remote(r) => {
                r.parse(r.send("DELETE", &format!("/personas/{id}"), None, version)?)
            }
        }
    }

    pub fn merge(&self, ids: &[PersonaId], guidance: Option<&str>) -> CliResult<PersonaView> {
        match self {
            Backend::Local(e) => Ok(e.merge(ids, guidance)?),
            Backend::Remote(r) => r.parse(r.send(
                "POST",
                "/personas/merge",
                Some(json!({ "ids": ids, "guidance": guidance })),
                None,
            )?),
        }
    }

    pub fn create_custom(&self, repo: &RepoId, profile: PersonaProfile) -> CliResult<PersonaView> {
        match self {
            Backend::Local(e) => Ok(e.create_custom(repo, profile)?),
            Backend::Remote(r) => r.parse(r.send(
                "POST",
                &format!("/repos/{repo}/personas"),
                Some(json!(profile)),
                None,
            )?),
        }
    }

    pub fn generate_more(&self, repo: &RepoId, count: usize) -> CliResult<Vec<PersonaView>> {
        match self {
            Backend::Local(e) => Ok(e.generate_more(repo, count)?),
            Backend::Remote(r) => r.parse(r.send(
                "POST",
                &format!("/repos/{repo}/personas/generate"),
                Some(json!({ "count": count })),
                None,
            )?),
        }
    }

    pub fn regenerate_all(&self, repo: &RepoId) -> CliResult<Vec<PersonaView>> {
        match self {
            Backend::Local(e) => Ok(e.regenerate_all(repo)?),
            Backend::Remote(r) => r.parse(r.send(
                "POST",
                &format!("/repos/{repo}/personas/regenerate"),
                None,
                None,
            )?),
        }
    }

    pub fn sync(&self, repo: &RepoId, req: SyncRequest) -> CliResult<String> {
        match self {
            Backend::Local(e) => Ok(e.submit_sync(repo, req)?),
            Backend::Remote(r) => r.job_id(r.send(
                "POST",
                &format!("/repos/{repo}/issues/sync"),
                Some(json!(req)),
                None,
            )?),
        }
    }

    pub fn save(&self, repo: &RepoId) -> CliResult<String> {
        match self {
            Backend::Local(e) => Ok(e.save(repo)?),
            Backend::Remote(r) => {
                r.job_id(r.send("POST", &format!("/repos/{repo}/save"), None, None)?)
            }
        }
    }

    pub fn map(&self, repo: &RepoId, force: bool) -> CliResult<String> {
        match self {
            Backend::Local(e) => Ok(e.submit_mapping(repo, force)?),
            Backend::Remote(r) => r.job_id(r.send(
                "POST",
                &format!("/repos/{repo}/issues/map"),
                Some(json!({ "force": force })),
                None,
            )?),
        }
    }

    pub fn issues(&self, repo: &RepoId, query: &IssueQuery) -> CliResult<IssueListing> {
        match self {
            Backend::Local(e) => Ok(e.issues(repo, query)?),
            Backend::Remote(r) => {
                let mut path = format!("/repos/{repo}/issues?view={}", enum_str(&query.view));
                if let Some(s) = &query.state {
                    path.push_str(&format!("&state={}", enum_str(s)));
                }
                if let Some(b) = &query.confidence_band {
                    path.push_str(&format!("&confidence_band={b}"));
                }
                if let Some(p) = &query.persona_id {
                    path.push_str(&format!("&persona_id={p}"));
                }
                r.get(&path)
            }
        }
    }

    pub fn issue(&self, repo: &RepoId, number: u64) -> CliResult<IssueDetail> {
        match self {
            Backend::Local(e) => Ok(e.issue_detail(repo, number)?),
            Backend::Remote(r) => r.get(&format!("/repos/{repo}/issues/{number}")),
        }
    }

    pub fn associate(
        &self,
        repo: &RepoId,
        number: u64,
        add: &[PersonaId],
        remove: &[PersonaId],
        version: Option<u64>,
    ) -> CliResult<IssueDetail> {
        match self {
            Backend::Local(e) => Ok(e.override_associations(repo, number, add, remove, version)?),
            Backend::Remote(r) => r.parse(r.send(
                "PUT",
                &format!("/repos/{repo}/issues/{number}/associations"),
                Some(json!({ "add": add, "remove": remove })),
                version,
            )?),
        }
    }

    pub fn analytics(&self, repo: &RepoId) -> CliResult<AnalyticsSummary> {
        match self {
            Backend::Local(e) => Ok(e.analytics(repo)?),
            Backend::Remote(r) => r.get(&format!("/repos/{repo}/analytics")),
        }
    }

    pub fn mapping_status(&self, repo: &RepoId) -> CliResult<MappingStatus> {
        match self {
            Backend::Local(e) => Ok(e.mapping_status(repo)?),
            Backend::Remote(r) => r.get(&format!("/repos/{repo}/mapping-status")),
        }
    }
}

fn enum_str<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(Value::String(s)) => s,
        _ => String::new(),
    }
}

/// Builds the embedded engine for `--local` mode.
pub fn local_engine(opts: &LocalOptions) -> CliResult<Engine> {
    let store = Store::open(&opts.data_dir)?;
    let config = EngineConfig::default();
    match opts.provider {
        ProviderKind::Offline => {
            let (host, mock) = load_offline(&opts.fixtures)?;
            let mut llm = LlmClient::new(Some(Arc::new(mock)));
            if opts.images {
                llm = llm.with_images(Arc::new(StubImageProvider));
            }
            Ok(Engine::new(store, Arc::new(host), llm, config)?)
        }
        ProviderKind::Live => {
            let key = opts.api_key.clone().ok_or_else(|| {
                Failure::usage("the live provider needs PERSONAFLOW_API_KEY in the environment")
            })?;
            let transport: Arc<dyn HttpTransport> = Arc::new(ReqwestTransport::new());
            let chat = ChatConfig::new(&opts.llm_base, &key, &opts.model);
            let mut llm =
                LlmClient::new(Some(Arc::new(ChatProvider::new(transport.clone(), chat))));
            if opts.images {
                let images = ChatConfig::new(&opts.llm_base, &key, &opts.image_model);
                llm = llm.with_images(Arc::new(ChatImageProvider::new(transport.clone(), images)));
            }
            let config = EngineConfig {
                connector: ConnectorConfig {
                    token: opts.host_token.clone(),
                    ..ConnectorConfig::default()
                },
                ..config
            };
            Ok(Engine::new(store, transport, llm, config)?)
        }
    }
}

/// Thin blocking client for the API server.
pub struct Remote {
    base: String,
    http: reqwest::blocking::Client,
}

impl Remote {
    #[cfg(test)]
    pub fn for_tests() -> Self {
        Remote::new("http://127.0.0.1:9").unwrap()
    }

    fn new(base: &str) -> CliResult<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| Failure::new(EXIT_REMOTE, format!("http client: {e}")))?;
        Ok(Remote {
            base: base.trim_end_matches('/').to_string(),
            http,
        })
    }

    fn send(
        &self,
        method: &str,
        path: &str,
        body: Option<Value>,
        if_match: Option<u64>,
    ) -> CliResult<Value> {
        let url = format!("{}{path}", self.base);
        let method = reqwest::Method::from_bytes(method.as_bytes())
            .map_err(|e| Failure::new(EXIT_INTERNAL, e.to_string()))?;
        let mut req = self.http.request(method, &url);
        if let Some(v) = if_match {
            req = req.header("if-match", v.to_string());
        }
        if let Some(b) = body {
            req = req
                .header("content-type", "application/json")
                .body(b.to_string());
        }
        let resp = req
            .send()
            .map_err(|e| Failure::new(EXIT_REMOTE, format!("{url}: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| Failure::new(EXIT_REMOTE, format!("{url}: {e}")))?;
        if !status.is_success() {
            return Err(match serde_json::from_str::<ErrorBody>(&text) {
                Ok(err) => Failure::new(class_exit_code(&err.class), err.error),
                Err(_) => Failure::new(EXIT_REMOTE, format!("{url} answered {status}")),
            });
        }
        serde_json::from_str(&text)
            .map_err(|e| Failure::new(EXIT_REMOTE, format!("{url}: unreadable response: {e}")))
    }

    fn parse<T: DeserializeOwned>(&self, v: Value) -> CliResult<T> {
        serde_json::from_value(v)
            .map_err(|e| Failure::new(EXIT_REMOTE, format!("unexpected response shape: {e}")))
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> CliResult<T> {
        self.parse(self.send("GET", path, None, None)?)
    }

    fn job_id(&self, v: Value) -> CliResult<String> {
        v["job_id"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Failure::new(EXIT_REMOTE, "response carries no job_id"))
    }
}

fn class_exit_code(class: &str) -> i32 {
    match class {
        "validation" | "not_found" | "conflict" => EXIT_VALIDATION,
        "provider" => EXIT_PROVIDER,
        "upstream" => EXIT_REMOTE,
        _ => EXIT_INTERNAL,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_failure_classes() {
        assert_eq!(exit_code(Error::InvalidParams("x".into()).class()), 2);
        assert_eq!(exit_code(Error::Provider("x".into()).class()), 4);
        assert_eq!(exit_code(Error::Transport("x".into()).class()), 3);
        assert_eq!(job_exit_code(Some(FailureClass::Provider)), 4);
        assert_eq!(job_exit_code(Some(FailureClass::Upstream)), 3);
        assert_eq!(job_exit_code(Some(FailureClass::Validation)), 2);
        for class in [
            ErrorClass::Validation,
            ErrorClass::NotFound,
            ErrorClass::Conflict,
            ErrorClass::Provider,
            ErrorClass::Upstream,
            ErrorClass::Internal,
        ] {
            let wire = personaflow_server::class_name(class);
            assert_eq!(class_exit_code(wire), exit_code(class), "{wire}");
        }
    }
}
