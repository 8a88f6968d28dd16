//! The engine facade: every workflow the HTTP API and the CLI expose.
//!
//! Quick operations (reads, edits, overrides, merges) run on the caller's
//! thread. Generation, mapping and sync run as jobs on the worker pool and
//! are observed through [`Engine::job_status`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex, Weak};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::analytics::{compute_summary, mapping_status};
use crate::connector::{parse_repo_url, ConnectorConfig, RepoConnector, SyncMode, SyncRequest};
use crate::corpus::{context_document, CorpusBuilder, CorpusLimits};
use crate::error::{Error, Result};
use crate::http::HttpTransport;
use crate::jobs::{
    generation_band, sync_band, JobKind, JobRecord, JobSnapshot, JobSpec, JobStage, WorkerPool,
};
use crate::mapping::{map_many, merge_remap, override_associations, repair_primary};
use crate::model::{
    AnalyticsSummary, Association, ConfidenceBand, IssuePersonaMapping, IssueRecord, IssueState,
    MappingStatus, Origin, Persona, PersonaId, PersonaProfile, RepoId, RepositoryRef,
};
use crate::parse::LinkPlan;
use crate::personas::{
    self, check_count, create_custom_persona, edit_persona, generate_personas, merge_personas,
    personas_from_domain, replaceable, AvatarMode, ChainStep, PersonaPatch,
};
use crate::provider::{LlmClient, ProviderCall};
use crate::store::{check_version, GenerationSettings, Store, StoreData};

const INTERRUPTED: &str = "interrupted by restart";

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Jobs that may run at the same time.
    pub workers: usize,
    /// Issues mapped in parallel; also the size of each persisted batch.
    pub map_concurrency: usize,
    pub connector: ConnectorConfig,
    pub corpus: CorpusLimits,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            workers: 2,
            map_concurrency: 4,
            connector: ConnectorConfig::default(),
            corpus: CorpusLimits::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// views

/// A persona as the API returns it: the entity plus its store envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaView {
    #[serde(flatten)]
    pub persona: Persona,
    pub repo_id: RepoId,
    pub version: u64,
    pub archived: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueView {
    #[default]
    Github,
    Persona,
}

impl std::str::FromStr for IssueView {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "github" => Ok(IssueView::Github),
            "persona" => Ok(IssueView::Persona),
            other => Err(Error::InvalidParams(format!(
                "unknown issue view `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IssueQuery {
    #[serde(default)]
    pub view: IssueView,
    #[serde(default)]
    pub state: Option<IssueState>,
    #[serde(default)]
    pub confidence_band: Option<ConfidenceBand>,
    #[serde(default)]
    pub persona_id: Option<PersonaId>,
}

/// One persona chip on an issue row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Badge {
    pub persona_id: PersonaId,
    pub persona_name: String,
    pub occupation: String,
    pub percent: u8,
    pub band: ConfidenceBand,
    pub origin: Origin,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueRow {
    #[serde(flatten)]
    pub issue: IssueRecord,
    pub version: u64,
    pub badges: Vec<Badge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaGroup {
    pub persona_id: PersonaId,
    pub persona_name: String,
    pub count: usize,
    pub issues: Vec<IssueRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "view", rename_all = "snake_case")]
pub enum IssueListing {
    Github {
        issues: Vec<IssueRow>,
    },
    Persona {
        groups: Vec<PersonaGroup>,
        /// Issues without any visible association; empty when a band or
        /// persona filter is set.
        unassigned: Vec<IssueRow>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationView {
    #[serde(flatten)]
    pub association: Association,
    pub persona_name: String,
    pub band: ConfidenceBand,
    pub percent: u8,
}

/// An issue with its full mapping. Tombstoned associations are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueDetail {
    pub issue: IssueRecord,
    pub version: u64,
    /// Version of the mapping record; 0 before the issue was first mapped.
    pub mapping_version: u64,
    pub mapped: bool,
    pub primary_persona_id: Option<PersonaId>,
    pub confidence: f64,
    pub reasoning: String,
    pub analysis_notes: Option<crate::model::AnalysisNotes>,
    pub associations: Vec<AssociationView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoSummary {
    pub repo_id: RepoId,
    #[serde(flatten)]
    pub repo: RepositoryRef,
    pub version: u64,
    pub active_personas: usize,
    pub issues: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub url: String,
    pub persona_count: usize,
    #[serde(default)]
    pub external_urls: Vec<String>,
    #[serde(default)]
    pub additional_context: String,
}

/// Stage/percent pairs a job went through, in order.
pub type JobTrace = Vec<(JobStage, u8)>;

// ---------------------------------------------------------------------------
// engine

#[derive(Clone)]
pub struct Engine {
    inner: Arc<Inner>,
}

struct Inner {
    store: Store,
    connector: Arc<RepoConnector>,
    corpus: CorpusBuilder,
    llm: LlmClient,
    config: EngineConfig,
    traces: Mutex<HashMap<String, JobTrace>>,
    pool: Mutex<Option<Arc<WorkerPool>>>,
}

impl Drop for Inner {
    fn drop(&mut self) {
        if let Ok(p) = self.pool.get_mut() {
            p.take();
        }
    }
}

impl Engine {
    /// Builds the engine and resumes persisted jobs: queued ones are run
    /// again, ones that were mid-flight are marked failed.
    pub fn new(
        store: Store,
        transport: Arc<dyn HttpTransport>,
        llm: LlmClient,
        config: EngineConfig,
    ) -> Result<Self> {
        let connector = Arc::new(RepoConnector::new(transport, config.connector.clone()));
        let corpus = CorpusBuilder::new(connector.clone()).with_limits(config.corpus);
        let inner = Arc::new(Inner {
            store,
            connector,
            corpus,
            llm,
            config,
            traces: Mutex::new(HashMap::new()),
            pool: Mutex::new(None),
        });
        let weak: Weak<Inner> = Arc::downgrade(&inner);
        let pool = WorkerPool::new(
            inner.config.workers,
            Arc::new(move |id: String| {
                if let Some(inner) = weak.upgrade() {
                    inner.run_job(&id);
                }
            }),
        );
        *inner.pool.lock().unwrap() = Some(Arc::new(pool));
        let requeue = inner.store.update(|d| {
            let mut queued: Vec<(chrono::DateTime<chrono::Utc>, String)> = Vec::new();
            for (id, rec) in d.jobs.iter_mut() {
                let s = &mut rec.snapshot;
                if s.stage == JobStage::Queued {
                    queued.push((s.started_at, id.clone()));
                } else if !s.stage.is_terminal() {
                    s.fail(&Error::Storage(INTERRUPTED.into()));
                }
            }
            queued.sort();
            Ok(queued.into_iter().map(|(_, id)| id).collect::<Vec<_>>())
        })?;
        let engine = Engine { inner };
        for id in requeue {
            engine.enqueue(id);
        }
        Ok(engine)
    }

    fn enqueue(&self, id: String) {
        if let Some(pool) = self.inner.pool.lock().unwrap().clone() {
            pool.enqueue(id);
        }
    }

    pub fn llm(&self) -> &LlmClient {
        &self.inner.llm
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    /// Every provider call made so far.
    pub fn ledger(&self) -> Vec<ProviderCall> {
        self.inner.llm.ledger().calls()
    }

    fn avatar_mode(&self) -> AvatarMode {
        self.inner.avatar_mode()
    }

    // -- jobs ---------------------------------------------------------------

    /// Queues a generation run. Validation happens here; nothing touches
    /// the network before the job id is returned.
    pub fn submit_generation(&self, req: GenerationRequest) -> Result<String> {
        check_count(req.persona_count)?;
        let parsed = parse_repo_url(&req.url)?;
        for u in &req.external_urls {
            let ok = url::Url::parse(u)
                .map(|p| matches!(p.scheme(), "http" | "https"))
                .unwrap_or(false);
            if !ok {
                return Err(Error::InvalidParams(format!(
                    "external url `{u}` is not an http(s) url"
                )));
            }
        }
        let repo_id = RepoId::new(&parsed.owner, &parsed.name);
        let spec = JobSpec::Generation {
            url: req.url.trim().to_string(),
            persona_count: req.persona_count,
            external_urls: req.external_urls,
            additional_context: req.additional_context,
        };
        self.submit(repo_id, spec, |d, repo_id| {
            let busy = d.jobs.values().any(|j| {
                j.snapshot.kind == JobKind::Generation
                    && &j.snapshot.repo_id == repo_id
                    && !j.snapshot.stage.is_terminal()
            });
            if busy {
                return Err(Error::BusyRepository(repo_id.to_string()));
            }
            Ok(())
        })
    }

    /// Queues a mapping run over unmapped issues, or over every issue when
    /// `force` is set. Manual decisions survive either way.
    pub fn submit_mapping(&self, repo_id: &RepoId, force: bool) -> Result<String> {
        let spec = JobSpec::Mapping {
            repo_id: repo_id.clone(),
            force,
        };
        self.submit(repo_id.clone(), spec, |d, repo_id| {
            if d.repo(repo_id)?.active_persona_ids().is_empty() {
                return Err(Error::InvalidParams(
                    "mapping needs at least one active persona".into(),
                ));
            }
            Ok(())
        })
    }

    /// Queues an issue sync followed by mapping of new or changed issues.
    pub fn submit_sync(&self, repo_id: &RepoId, request: SyncRequest) -> Result<String> {
        request.validate()?;
        let spec = JobSpec::Sync {
            repo_id: repo_id.clone(),
            request,
        };
        self.submit(repo_id.clone(), spec, |d, repo_id| {
            d.repo(repo_id).map(|_| ())
        })
    }

    /// "Save and continue": pull the default batch of open issues and map
    /// them onto the current personas.
    pub fn save(&self, repo_id: &RepoId) -> Result<String> {
        self.submit_sync(repo_id, SyncRequest::default())
    }

    fn submit(
        &self,
        repo_id: RepoId,
        spec: JobSpec,
        check: impl FnOnce(&StoreData, &RepoId) -> Result<()>,
    ) -> Result<String> {
        let id = uuid::Uuid::new_v4().to_string();
        let snapshot = JobSnapshot::queued(id.clone(), spec.kind(), repo_id.clone());
        self.inner.store.update(|d| {
            check(d, &repo_id)?;
            d.jobs.insert(
                id.clone(),
                JobRecord {
                    snapshot: snapshot.clone(),
                    spec,
                },
            );
            Ok(())
        })?;
        self.inner
            .traces
            .lock()
            .unwrap()
            .insert(id.clone(), vec![(JobStage::Queued, 0)]);
        self.enqueue(id.clone());
        Ok(id)
    }

    pub fn job_status(&self, id: &str) -> Result<JobSnapshot> {
        self.inner
            .store
            .snapshot()
            .jobs
            .get(id)
            .map(|j| j.snapshot.clone())
            .ok_or_else(|| Error::UnknownJob(id.to_string()))
    }

    pub fn jobs(&self) -> Vec<JobSnapshot> {
        let mut out: Vec<JobSnapshot> = self
            .inner
            .store
            .snapshot()
            .jobs
            .values()
            .map(|j| j.snapshot.clone())
            .collect();
        out.sort_by_key(|a| a.started_at);
        out
    }

    /// Every stage/percent change this process observed for the job.
    pub fn job_trace(&self, id: &str) -> Option<JobTrace> {
        self.inner.traces.lock().unwrap().get(id).cloned()
    }

    /// Blocks until the job is terminal or `timeout` elapses; returns the
    /// latest snapshot either way.
    pub fn wait(&self, id: &str, timeout: Duration) -> Result<JobSnapshot> {
        let deadline = Instant::now() + timeout;
        loop {
            let s = self.job_status(id)?;
            if s.stage.is_terminal() || Instant::now() >= deadline {
                return Ok(s);
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    // -- repositories -------------------------------------------------------

    pub fn repos(&self) -> Vec<RepoSummary> {
        let snap = self.inner.store.snapshot();
        snap.repos
            .iter()
            .map(|(id, s)| repo_summary(id, s))
            .collect()
    }

    pub fn repo(&self, id: &RepoId) -> Result<RepoSummary> {
        let snap = self.inner.store.snapshot();
        Ok(repo_summary(id, snap.repo(id)?))
    }

    // -- personas -----------------------------------------------------------

    pub fn personas(&self, repo_id: &RepoId, include_archived: bool) -> Result<Vec<PersonaView>> {
        let snap = self.inner.store.snapshot();
        let state = snap.repo(repo_id)?;
        Ok(state
            .personas
            .iter()
            .filter(|r| include_archived || !r.tombstoned)
            .map(|r| PersonaView {
                persona: r.entity.clone(),
                repo_id: repo_id.clone(),
                version: r.version,
                archived: r.tombstoned,
            })
            .collect())
    }

    /// Looks a persona up by id, archived ones included.
    pub fn persona(&self, id: &PersonaId) -> Result<PersonaView> {
        persona_view(&self.inner.store.snapshot(), id)
    }

    pub fn edit_persona(
        &self,
        id: &PersonaId,
        patch: &PersonaPatch,
        expected_version: Option<u64>,
    ) -> Result<PersonaView> {
        self.inner.store.update(|d| {
            let rid = d.persona_owner(id)?;
            let rec = d.repo(&rid)?.persona(id).expect("owner holds persona");
            if rec.tombstoned {
                return Err(Error::UnknownPersona(id.clone()));
            }
            check_version(expected_version, rec.version)?;
            let edited = edit_persona(&rec.entity, patch)?;
            d.replace_persona(&rid, edited)?;
            persona_view(d, id)
        })
    }

    /// Archives a persona. Its associations are hidden; the record stays
    /// retrievable with `include_archived`.
    pub fn archive_persona(
        &self,
        id: &PersonaId,
        expected_version: Option<u64>,
    ) -> Result<PersonaView> {
        self.inner.store.update(|d| {
            let rid = d.persona_owner(id)?;
            let rec = d.repo(&rid)?.persona(id).expect("owner holds persona");
            if rec.tombstoned {
                return Err(Error::UnknownPersona(id.clone()));
            }
            check_version(expected_version, rec.version)?;
            d.archive_persona(&rid, id)?;
            persona_view(d, id)
        })
    }

    pub fn create_custom(&self, repo_id: &RepoId, profile: PersonaProfile) -> Result<PersonaView> {
        let p = create_custom_persona(profile)?;
        let id = p.id.clone();
        self.inner.store.update(|d| {
            d.add_persona(repo_id, p)?;
            persona_view(d, &id)
        })
    }

    /// Merges two or more active personas of one repository into a new
    /// persona and archives the sources. One provider call.
    pub fn merge(&self, ids: &[PersonaId], guidance: Option<&str>) -> Result<PersonaView> {
        let first = ids.first().ok_or(Error::FewerThanTwo)?;
        let snap = self.inner.store.snapshot();
        let rid = snap.persona_owner(first)?;
        let active = snap.repo(&rid)?.active_personas();
        let (merged, warnings) =
            merge_personas(&self.inner.llm, &active, ids, guidance, self.avatar_mode())?;
        for w in warnings {
            tracing::warn!(%w, "merge");
        }
        let merged_id = merged.id.clone();
        self.inner.store.update(|d| {
            let still_active = d.repo(&rid)?.active_persona_ids();
            for src in &merged.source_persona_ids {
                if !still_active.contains(src) {
                    return Err(Error::UnknownPersona(src.clone()));
                }
            }
            for src in &merged.source_persona_ids {
                d.archive_persona(&rid, src)?;
            }
            d.add_persona(&rid, merged)?;
            persona_view(d, &merged_id)
        })
    }

    /// Adds `n` AI personas distinct from the active ones. Needs a prior
    /// analysis; one provider call.
    pub fn generate_more(&self, repo_id: &RepoId, n: usize) -> Result<Vec<PersonaView>> {
        check_count(n)?;
        let snap = self.inner.store.snapshot();
        let state = snap.repo(repo_id)?;
        let domain = state
            .domain
            .as_ref()
            .ok_or_else(|| Error::InvalidParams("repository has not been analyzed yet".into()))?;
        let active = state.active_personas();
        let (fresh, warnings) =
            personas_from_domain(&self.inner.llm, domain, n, &active, self.avatar_mode())?;
        for w in warnings {
            tracing::warn!(%w, "generate more");
        }
        self.store_new_personas(repo_id, fresh, &[])
    }

    /// Replaces every unedited AI persona with a fresh set of the same
    /// size. Edited, manual and merged personas stay. One provider call.
    pub fn regenerate_all(&self, repo_id: &RepoId) -> Result<Vec<PersonaView>> {
        let snap = self.inner.store.snapshot();
        let state = snap.repo(repo_id)?;
        let domain = state
            .domain
            .as_ref()
            .ok_or_else(|| Error::InvalidParams("repository has not been analyzed yet".into()))?;
        let active = state.active_personas();
        let n = active.iter().filter(|p| replaceable(p)).count();
        if n == 0 {
            return Err(Error::InvalidParams(
                "no unedited AI personas to regenerate".into(),
            ));
        }
        let (fresh, archive, warnings) =
            personas::regenerate(&self.inner.llm, domain, &active, n, self.avatar_mode())?;
        for w in warnings {
            tracing::warn!(%w, "regenerate");
        }
        self.store_new_personas(repo_id, fresh, &archive)
    }

    fn store_new_personas(
        &self,
        repo_id: &RepoId,
        fresh: Vec<Persona>,
        archive: &[PersonaId],
    ) -> Result<Vec<PersonaView>> {
        let ids: Vec<PersonaId> = fresh.iter().map(|p| p.id.clone()).collect();
        self.inner.store.update(|d| {
            for id in archive {
                d.archive_persona(repo_id, id)?;
            }
            for p in fresh {
                d.add_persona(repo_id, p)?;
            }
            ids.iter().map(|id| persona_view(d, id)).collect()
        })
    }

    // -- issues -------------------------------------------------------------

    pub fn issues(&self, repo_id: &RepoId, query: &IssueQuery) -> Result<IssueListing> {
        let snap = self.inner.store.snapshot();
        let state = snap.repo(repo_id)?;
        if let Some(pid) = &query.persona_id {
            if state.persona(pid).is_none() {
                return Err(Error::UnknownPersona(pid.clone()));
            }
        }
        let active = state.active_personas();
        let names: BTreeMap<&PersonaId, &Persona> = active.iter().map(|p| (&p.id, p)).collect();
        let rows: Vec<IssueRow> = state
            .issues
            .values()
            .filter(|r| !r.tombstoned)
            .filter(|r| query.state.is_none_or(|s| r.entity.state == s))
            .map(|r| IssueRow {
                issue: r.entity.clone(),
                version: r.version,
                badges: badges(
                    state.mappings.get(&r.entity.number).map(|m| &m.entity),
                    &names,
                ),
            })
            .collect();
        let keep = |b: &Badge| {
            query.confidence_band.is_none_or(|band| b.band == band)
                && query.persona_id.as_ref().is_none_or(|p| &b.persona_id == p)
        };
        let filtered = query.confidence_band.is_some() || query.persona_id.is_some();
        Ok(match query.view {
            IssueView::Github => IssueListing::Github {
                issues: rows
                    .into_iter()
                    .filter(|r| !filtered || r.badges.iter().any(keep))
                    .collect(),
            },
            IssueView::Persona => {
                let groups = active
                    .iter()
                    .filter(|p| query.persona_id.as_ref().is_none_or(|id| &p.id == id))
                    .map(|p| {
                        let issues: Vec<IssueRow> = rows
                            .iter()
                            .filter(|r| r.badges.iter().any(|b| b.persona_id == p.id && keep(b)))
                            .cloned()
                            .collect();
                        PersonaGroup {
                            persona_id: p.id.clone(),
                            persona_name: p.profile.name.clone(),
                            count: issues.len(),
                            issues,
                        }
                    })
                    .collect();
                let unassigned = if filtered {
                    Vec::new()
                } else {
                    rows.iter()
                        .filter(|r| r.badges.is_empty())
                        .cloned()
                        .collect()
                };
                IssueListing::Persona { groups, unassigned }
            }
        })
    }

    pub fn issue_detail(&self, repo_id: &RepoId, number: u64) -> Result<IssueDetail> {
        issue_detail(&self.inner.store.snapshot(), repo_id, number)
    }

    /// Adds and removes manual associations. `expected_version` is the
    /// mapping version the caller saw (0 for a never-mapped issue).
    pub fn override_associations(
        &self,
        repo_id: &RepoId,
        number: u64,
        add: &[PersonaId],
        remove: &[PersonaId],
        expected_version: Option<u64>,
    ) -> Result<IssueDetail> {
        self.inner.store.update(|d| {
            let state = d.repo(repo_id)?;
            if !state.issues.get(&number).is_some_and(|r| !r.tombstoned) {
                return Err(Error::UnknownIssue(number));
            }
            let current = state.mappings.get(&number);
            check_version(expected_version, current.map_or(0, |r| r.version))?;
            let known = state.active_persona_ids();
            let updated =
                override_associations(current.map(|r| &r.entity), number, add, remove, &known)?;
            d.put_mapping(repo_id, updated)?;
            issue_detail(d, repo_id, number)
        })
    }

    // -- reporting ----------------------------------------------------------

    pub fn analytics(&self, repo_id: &RepoId) -> Result<AnalyticsSummary> {
        let snap = self.inner.store.snapshot();
        let s = snap.repo(repo_id)?;
        Ok(compute_summary(
            &s.issue_list(),
            &s.mapping_map(),
            &s.active_persona_ids(),
            s.repo.entity.stars,
        ))
    }

    pub fn mapping_status(&self, repo_id: &RepoId) -> Result<MappingStatus> {
        let snap = self.inner.store.snapshot();
        let s = snap.repo(repo_id)?;
        Ok(mapping_status(
            &s.issue_list(),
            &s.mapping_map(),
            &s.active_persona_ids(),
        ))
    }
}

fn repo_summary(id: &RepoId, s: &crate::store::RepoState) -> RepoSummary {
    RepoSummary {
        repo_id: id.clone(),
        repo: s.repo.entity.clone(),
        version: s.repo.version,
        active_personas: s.active_persona_ids().len(),
        issues: s.issues.values().filter(|r| !r.tombstoned).count(),
    }
}

fn persona_view(d: &StoreData, id: &PersonaId) -> Result<PersonaView> {
    let rid = d.persona_owner(id)?;
    let rec = d.repo(&rid)?.persona(id).expect("owner holds persona");
    Ok(PersonaView {
        persona: rec.entity.clone(),
        repo_id: rid,
        version: rec.version,
        archived: rec.tombstoned,
    })
}

fn badges(
    mapping: Option<&IssuePersonaMapping>,
    active: &BTreeMap<&PersonaId, &Persona>,
) -> Vec<Badge> {
    let Some(m) = mapping else {
        return Vec::new();
    };
    let mut out: Vec<Badge> = m
        .visible()
        .filter_map(|a| {
            let p = active.get(&a.persona_id)?;
            Some(Badge {
                persona_id: a.persona_id.clone(),
                persona_name: p.profile.name.clone(),
                occupation: p.profile.occupation.clone(),
                percent: a.percent(),
                band: a.band(),
                origin: a.origin,
                rationale: a.rationale.clone(),
            })
        })
        .collect();
    out.sort_by(|a, b| {
        b.percent
            .cmp(&a.percent)
            .then_with(|| a.persona_name.cmp(&b.persona_name))
    });
    out
}

fn issue_detail(d: &StoreData, repo_id: &RepoId, number: u64) -> Result<IssueDetail> {
    let state = d.repo(repo_id)?;
    let rec = state
        .issues
        .get(&number)
        .filter(|r| !r.tombstoned)
        .ok_or(Error::UnknownIssue(number))?;
    let names: BTreeMap<&PersonaId, &str> = state
        .personas
        .iter()
        .map(|r| (&r.entity.id, r.entity.profile.name.as_str()))
        .collect();
    let mapping = state.mappings.get(&number);
    let m = mapping.map(|r| &r.entity);
    Ok(IssueDetail {
        issue: rec.entity.clone(),
        version: rec.version,
        mapping_version: mapping.map_or(0, |r| r.version),
        mapped: mapping.is_some(),
        primary_persona_id: m.and_then(|m| m.primary_persona_id.clone()),
        confidence: m.map_or(0.0, |m| m.confidence),
        reasoning: m.map(|m| m.reasoning.clone()).unwrap_or_default(),
        analysis_notes: m.and_then(|m| m.analysis_notes.clone()),
        associations: m
            .into_iter()
            .flat_map(|m| m.live())
            .map(|a| AssociationView {
                persona_name: names
                    .get(&a.persona_id)
                    .copied()
                    .unwrap_or_default()
                    .to_string(),
                band: a.band(),
                percent: a.percent(),
                association: a.clone(),
            })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// job execution

/// Handle a running job uses to report progress.
struct JobCtx<'a> {
    inner: &'a Inner,
    id: String,
    llm: LlmClient,
}

impl JobCtx<'_> {
    fn update(&self, f: impl FnOnce(&mut JobSnapshot) -> bool) {
        let id = &self.id;
        let result = self.inner.store.update(|d| {
            let rec = d
                .jobs
                .get_mut(id)
                .ok_or_else(|| Error::UnknownJob(id.clone()))?;
            let changed = f(&mut rec.snapshot);
            Ok((changed, rec.snapshot.stage, rec.snapshot.percent))
        });
        match result {
            Ok((true, stage, percent)) => {
                let mut traces = self.inner.traces.lock().unwrap();
                traces.entry(id.clone()).or_default().push((stage, percent));
            }
            Ok(_) => {}
            Err(e) => tracing::error!(job = %id, error = %e, "could not record job progress"),
        }
    }

    fn advance(&self, stage: JobStage, percent: u8) {
        self.update(|s| s.advance(stage, percent));
    }

    fn warn(&self, message: impl Into<String>) {
        let message = message.into();
        tracing::warn!(job = %self.id, %message);
        self.update(|s| {
            s.warnings.push(message);
            false
        });
    }
}

impl Inner {
    fn avatar_mode(&self) -> AvatarMode {
        if self.llm.images_enabled() {
            AvatarMode::GeneratedImage
        } else {
            AvatarMode::ParameterizedUrl
        }
    }

    fn run_job(&self, id: &str) {
        let Some(rec) = self.store.snapshot().jobs.get(id).cloned() else {
            return;
        };
        if rec.snapshot.stage != JobStage::Queued {
            return;
        }
        let ctx = JobCtx {
            inner: self,
            id: id.to_string(),
            llm: self.llm.for_job(id),
        };
        let outcome = catch_unwind(AssertUnwindSafe(|| match &rec.spec {
            JobSpec::Generation {
                url,
                persona_count,
                external_urls,
                additional_context,
            } => self.run_generation(&ctx, url, *persona_count, external_urls, additional_context),
            JobSpec::Mapping { repo_id, force } => self.run_mapping(&ctx, repo_id, *force),
            JobSpec::Sync { repo_id, request } => self.run_sync(&ctx, repo_id, request),
        }))
        .unwrap_or_else(|_| Err(Error::Storage("job panicked".into())));
        match outcome {
            Ok(()) => ctx.update(|s| s.finish()),
            Err(e) => {
                tracing::warn!(job = %id, error = %e, "job failed");
                ctx.update(|s| s.fail(&e));
            }
        }
    }

    fn run_generation(
        &self,
        ctx: &JobCtx<'_>,
        url: &str,
        n: usize,
        external_urls: &[String],
        additional_context: &str,
    ) -> Result<()> {
        let band = |s: JobStage| generation_band(s);
        ctx.advance(JobStage::FetchReadme, 5);
        let repo = self.connector.fetch_repo(url)?;
        let readme = match self.connector.fetch_readme(&repo) {
            Ok(doc) => Some(doc),
            Err(Error::NoReadme) => {
                ctx.warn("repository has no readme; link discovery skipped");
                None
            }
            Err(e) => return Err(e),
        };
        ctx.advance(JobStage::FetchReadme, band(JobStage::FetchReadme).1);

        ctx.advance(JobStage::ExternalDocs, band(JobStage::ExternalDocs).0);
        let plan = match &readme {
            Some(doc) => match self.corpus.discover_links(&ctx.llm, &repo, doc) {
                Ok(plan) => plan,
                Err(e @ (Error::Parse { .. } | Error::Provider(_))) => {
                    ctx.warn(format!(
                        "link discovery failed, continuing with the readme only: {e}"
                    ));
                    LinkPlan::default()
                }
                Err(e) => return Err(e),
            },
            None => LinkPlan::default(),
        };
        ctx.advance(JobStage::ExternalDocs, 25);
        let mut user_docs = Vec::new();
        for u in external_urls {
            match self.corpus.fetch_user_url(u) {
                Ok(doc) => user_docs.push(doc),
                Err(e) => ctx.warn(format!("skipped {u}: {e}")),
            }
        }
        if !additional_context.trim().is_empty() {
            user_docs.push(context_document(additional_context));
        }
        let built = self.corpus.build_corpus(&repo, readme, &plan, user_docs)?;
        for w in built.warnings {
            ctx.warn(w);
        }
        ctx.advance(JobStage::ExternalDocs, band(JobStage::ExternalDocs).1);

        ctx.advance(JobStage::AnalyzeDomain, band(JobStage::AnalyzeDomain).0);
        let avatars = self.avatar_mode();
        let generated =
            generate_personas(
                &ctx.llm,
                &built.corpus,
                n,
                avatars,
                &mut |step| match step {
                    ChainStep::InsightsDone => ctx.advance(JobStage::AnalyzeDomain, 60),
                    ChainStep::DomainDone => {
                        ctx.advance(JobStage::AnalyzeDomain, 70);
                        ctx.advance(
                            JobStage::GeneratePersonas,
                            band(JobStage::GeneratePersonas).0,
                        );
                    }
                    ChainStep::PersonasDone => ctx.advance(JobStage::GeneratePersonas, 90),
                },
            )?;
        for w in &generated.warnings {
            ctx.warn(w.clone());
        }
        let settings = GenerationSettings {
            persona_count: n,
            external_urls: external_urls.to_vec(),
            additional_context: additional_context.to_string(),
            avatar_mode: avatars,
        };
        let corpus = built.corpus;
        self.store.update(move |d| {
            let rid = d.upsert_repo(repo);
            let stale: Vec<PersonaId> = d
                .repo(&rid)?
                .personas
                .iter()
                .filter(|r| !r.tombstoned && replaceable(&r.entity))
                .map(|r| r.entity.id.clone())
                .collect();
            for id in &stale {
                d.archive_persona(&rid, id)?;
            }
            for p in generated.personas {
                d.add_persona(&rid, p)?;
            }
            let st = d.repo_mut(&rid)?;
            st.corpus = Some(corpus);
            st.insights = Some(generated.insights);
            st.domain = Some(generated.domain);
            st.settings = Some(settings);
            Ok(())
        })
    }

    fn run_mapping(&self, ctx: &JobCtx<'_>, repo_id: &RepoId, force: bool) -> Result<()> {
        ctx.advance(JobStage::MapIssues, 0);
        let snap = self.store.snapshot();
        let state = snap.repo(repo_id)?;
        let numbers: Vec<u64> = state
            .issues
            .values()
            .filter(|r| !r.tombstoned && (force || !state.mappings.contains_key(&r.entity.number)))
            .map(|r| r.entity.number)
            .collect();
        if state.active_persona_ids().is_empty() {
            return Err(Error::InvalidParams(
                "mapping needs at least one active persona".into(),
            ));
        }
        self.map_phase(ctx, repo_id, &numbers, (0, 100))
    }

    fn run_sync(&self, ctx: &JobCtx<'_>, repo_id: &RepoId, request: &SyncRequest) -> Result<()> {
        ctx.advance(JobStage::SyncIssues, 0);
        let snap = self.store.snapshot();
        let state = snap.repo(repo_id)?;
        let stored = state.repo.entity.clone();
        let url = format!("{}/{}/{}", stored.host, stored.owner, stored.name);
        let repo = match self.connector.fetch_repo(&url) {
            Ok(fresh) => fresh,
            Err(e @ (Error::RateLimited { .. } | Error::Transport(_) | Error::HostResponse(_))) => {
                ctx.warn(format!("repository metadata not refreshed: {e}"));
                stored.clone()
            }
            Err(e) => return Err(e),
        };
        ctx.advance(JobStage::SyncIssues, 5);
        let mut fetched = self.connector.fetch_issues(&repo, request)?;
        if request.mode == SyncMode::AllNew {
            // "New" means created no earlier than the newest stored issue;
            // re-fetching that boundary issue is harmless because upserts
            // of unchanged issues are no-ops.
            if let Some(latest) = state.issues.values().map(|r| r.entity.created_at).max() {
                fetched.retain(|i| i.created_at >= latest);
            }
        }
        ctx.advance(JobStage::SyncIssues, 25);
        let changed = self.store.update(|d| {
            let rid = d.upsert_repo(repo);
            if &rid != repo_id {
                return Err(Error::HostResponse(format!(
                    "repository {repo_id} now reports itself as {rid}"
                )));
            }
            let mut changed = BTreeSet::new();
            for issue in fetched {
                let n = issue.number;
                if d.upsert_issue(repo_id, issue)? {
                    changed.insert(n);
                }
            }
            Ok(changed)
        })?;
        ctx.advance(JobStage::SyncIssues, sync_band(JobStage::SyncIssues).1);

        let snap = self.store.snapshot();
        let state = snap.repo(repo_id)?;
        if state.active_persona_ids().is_empty() {
            ctx.warn("no active personas; synced issues left unmapped");
            return Ok(());
        }
        let numbers: Vec<u64> = state
            .issues
            .values()
            .map(|r| r.entity.number)
            .filter(|n| changed.contains(n) || !state.mappings.contains_key(n))
            .collect();
        ctx.advance(JobStage::MapIssues, sync_band(JobStage::MapIssues).0);
        self.map_phase(ctx, repo_id, &numbers, sync_band(JobStage::MapIssues))
    }

    /// Maps `numbers` in batches, persisting each batch and moving the
    /// percent from `lo` to `hi`. Per-issue failures become warnings; the
    /// job only fails when every issue failed.
    fn map_phase(
        &self,
        ctx: &JobCtx<'_>,
        repo_id: &RepoId,
        numbers: &[u64],
        (lo, hi): (u8, u8),
    ) -> Result<()> {
        if numbers.is_empty() {
            return Ok(());
        }
        let batch = self.config.map_concurrency.max(1);
        let mut first_error = None;
        let mut succeeded = 0usize;
        for (i, chunk) in numbers.chunks(batch).enumerate() {
            let snap = self.store.snapshot();
            let state = snap.repo(repo_id)?;
            let personas = state.active_personas();
            if personas.is_empty() {
                return Err(Error::InvalidParams(
                    "every persona was archived during mapping".into(),
                ));
            }
            let issues: Vec<IssueRecord> = chunk
                .iter()
                .filter_map(|n| state.issues.get(n).map(|r| r.entity.clone()))
                .collect();
            let results = map_many(&ctx.llm, &issues, &personas, batch);
            let mut fresh = Vec::new();
            for (n, r) in results {
                match r {
                    Ok(m) => fresh.push(m),
                    Err(e) => {
                        ctx.warn(format!("issue #{n} not mapped: {e}"));
                        first_error.get_or_insert(e);
                    }
                }
            }
            succeeded += fresh.len();
            self.store.update(|d| {
                let active: BTreeSet<PersonaId> =
                    d.repo(repo_id)?.active_persona_ids().into_iter().collect();
                for m in fresh {
                    let n = m.issue_number;
                    let existing = d.repo(repo_id)?.mappings.get(&n).map(|r| r.entity.clone());
                    let mut merged = merge_remap(existing.as_ref(), m);
                    merged.associations.retain(|a| {
                        a.tombstoned || a.origin == Origin::Manual || active.contains(&a.persona_id)
                    });
                    repair_primary(&mut merged);
                    if existing.as_ref() != Some(&merged) {
                        d.put_mapping(repo_id, merged)?;
                    }
                }
                Ok(())
            })?;
            let done = ((i + 1) * batch).min(numbers.len());
            let pct = lo as usize + (hi - lo) as usize * done / numbers.len();
            ctx.advance(JobStage::MapIssues, pct.min(hi as usize) as u8);
        }
        match first_error {
            Some(e) if succeeded == 0 => Err(e),
            _ => Ok(()),
        }
    }
}
