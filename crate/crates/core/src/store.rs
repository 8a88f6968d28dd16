//! Durable state: repositories with their personas, issues and mappings,
//! plus job records.
//!
//! Everything lives in one JSON document. Readers get an immutable
//! snapshot; writers run one at a time, mutate a copy, persist it with an
//! atomic rename and then publish it. A failed write leaves both the file
//! and the published snapshot untouched.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jobs::JobRecord;
use crate::mapping::tombstone_persona;
use crate::model::{
    DomainAnalysis, IssuePersonaMapping, IssueRecord, Persona, PersonaId, RepoId, RepositoryRef,
    ResourceCorpus, UserInsights,
};
use crate::personas::AvatarMode;

pub const STORE_FILE: &str = "personaflow.json";

/// Envelope around every stored entity. `version` comes from a store-wide
/// counter, so a version is never handed out twice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record<T> {
    pub version: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tombstoned: bool,
    pub entity: T,
}

/// Inputs of the last generation run, reused by "generate more" and
/// "regenerate all".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub persona_count: usize,
    #[serde(default)]
    pub external_urls: Vec<String>,
    #[serde(default)]
    pub additional_context: String,
    pub avatar_mode: AvatarMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoState {
    pub repo: Record<RepositoryRef>,
    /// Creation order; archived personas stay in place as tombstones.
    #[serde(default)]
    pub personas: Vec<Record<Persona>>,
    #[serde(default)]
    pub issues: BTreeMap<u64, Record<IssueRecord>>,
    #[serde(default)]
    pub mappings: BTreeMap<u64, Record<IssuePersonaMapping>>,
    #[serde(default)]
    pub corpus: Option<ResourceCorpus>,
    #[serde(default)]
    pub insights: Option<UserInsights>,
    #[serde(default)]
    pub domain: Option<DomainAnalysis>,
    #[serde(default)]
    pub settings: Option<GenerationSettings>,
}

impl RepoState {
    pub fn new(repo: RepositoryRef, version: u64) -> Self {
        RepoState {
            repo: Record {
                version,
                tombstoned: false,
                entity: repo,
            },
            personas: Vec::new(),
            issues: BTreeMap::new(),
            mappings: BTreeMap::new(),
            corpus: None,
            insights: None,
            domain: None,
            settings: None,
        }
    }

    pub fn active_personas(&self) -> Vec<Persona> {
        self.personas
            .iter()
            .filter(|r| !r.tombstoned)
            .map(|r| r.entity.clone())
            .collect()
    }

    pub fn active_persona_ids(&self) -> Vec<PersonaId> {
        self.personas
            .iter()
            .filter(|r| !r.tombstoned)
            .map(|r| r.entity.id.clone())
            .collect()
    }

    pub fn persona(&self, id: &PersonaId) -> Option<&Record<Persona>> {
        self.personas.iter().find(|r| &r.entity.id == id)
    }

    pub fn persona_mut(&mut self, id: &PersonaId) -> Option<&mut Record<Persona>> {
        self.personas.iter_mut().find(|r| &r.entity.id == id)
    }

    /// Issues in ascending number order.
    pub fn issue_list(&self) -> Vec<IssueRecord> {
        self.issues
            .values()
            .filter(|r| !r.tombstoned)
            .map(|r| r.entity.clone())
            .collect()
    }

    pub fn mapping_map(&self) -> BTreeMap<u64, IssuePersonaMapping> {
        self.mappings
            .iter()
            .filter(|(_, r)| !r.tombstoned)
            .map(|(n, r)| (*n, r.entity.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreData {
    /// Last version handed out.
    #[serde(default)]
    pub version: u64,
    #[serde(default)]
    pub repos: BTreeMap<RepoId, RepoState>,
    #[serde(default)]
    pub jobs: BTreeMap<String, JobRecord>,
}

impl StoreData {
    pub fn next_version(&mut self) -> u64 {
        self.version += 1;
        self.version
    }

    pub fn repo(&self, id: &RepoId) -> Result<&RepoState> {
        self.repos
            .get(id)
            .ok_or_else(|| Error::UnknownRepository(id.to_string()))
    }

    pub fn repo_mut(&mut self, id: &RepoId) -> Result<&mut RepoState> {
        self.repos
            .get_mut(id)
            .ok_or_else(|| Error::UnknownRepository(id.to_string()))
    }

    /// The repository holding persona `id`, archived or not.
    pub fn persona_owner(&self, id: &PersonaId) -> Result<RepoId> {
        self.repos
            .iter()
            .find(|(_, s)| s.persona(id).is_some())
            .map(|(rid, _)| rid.clone())
            .ok_or_else(|| Error::UnknownPersona(id.clone()))
    }

    /// Creates or refreshes the repository record; the version only moves
    /// when the metadata changed.
    pub fn upsert_repo(&mut self, repo: RepositoryRef) -> RepoId {
        let id = repo.id();
        match self.repos.get(&id).map(|s| s.repo.entity == repo) {
            Some(true) => {}
            Some(false) => {
                let v = self.next_version();
                let rec = &mut self.repos.get_mut(&id).expect("present").repo;
                rec.version = v;
                rec.entity = repo;
            }
            None => {
                let v = self.next_version();
                self.repos.insert(id.clone(), RepoState::new(repo, v));
            }
        }
        id
    }

    pub fn add_persona(&mut self, repo: &RepoId, persona: Persona) -> Result<u64> {
        let v = self.next_version();
        self.repo_mut(repo)?.personas.push(Record {
            version: v,
            tombstoned: false,
            entity: persona,
        });
        Ok(v)
    }

    pub fn replace_persona(&mut self, repo: &RepoId, persona: Persona) -> Result<u64> {
        let v = self.next_version();
        let id = persona.id.clone();
        let rec = self
            .repo_mut(repo)?
            .persona_mut(&id)
            .ok_or(Error::UnknownPersona(id))?;
        rec.version = v;
        rec.entity = persona;
        Ok(v)
    }

    /// Archives a persona and hides its issue associations.
    pub fn archive_persona(&mut self, repo: &RepoId, id: &PersonaId) -> Result<()> {
        let v = self.next_version();
        let state = self.repo_mut(repo)?;
        let rec = state
            .persona_mut(id)
            .ok_or_else(|| Error::UnknownPersona(id.clone()))?;
        if rec.tombstoned {
            return Ok(());
        }
        rec.tombstoned = true;
        rec.version = v;
        let touched: Vec<u64> = state
            .mappings
            .iter_mut()
            .filter_map(|(n, r)| tombstone_persona(&mut r.entity, id).then_some(*n))
            .collect();
        for n in touched {
            let v = self.next_version();
            self.repo_mut(repo)?
                .mappings
                .get_mut(&n)
                .expect("present")
                .version = v;
        }
        Ok(())
    }

    /// Inserts or updates an issue. Returns false, and leaves the record
    /// alone, when the stored copy already has the same content.
    pub fn upsert_issue(&mut self, repo: &RepoId, issue: IssueRecord) -> Result<bool> {
        let unchanged = self
            .repo(repo)?
            .issues
            .get(&issue.number)
            .is_some_and(|r| !r.tombstoned && r.entity.same_content(&issue));
        if unchanged {
            return Ok(false);
        }
        let v = self.next_version();
        self.repo_mut(repo)?.issues.insert(
            issue.number,
            Record {
                version: v,
                tombstoned: false,
                entity: issue,
            },
        );
        Ok(true)
    }

    pub fn put_mapping(&mut self, repo: &RepoId, mapping: IssuePersonaMapping) -> Result<u64> {
        let v = self.next_version();
        self.repo_mut(repo)?.mappings.insert(
            mapping.issue_number,
            Record {
                version: v,
                tombstoned: false,
                entity: mapping,
            },
        );
        Ok(v)
    }
}

/// Fails with [`Error::StaleVersion`] when the caller saw an older version.
pub fn check_version(expected: Option<u64>, found: u64) -> Result<()> {
    match expected {
        Some(e) if e != found => Err(Error::StaleVersion { expected: e, found }),
        _ => Ok(()),
    }
}

pub struct Store {
    path: Option<PathBuf>,
    current: RwLock<Arc<StoreData>>,
    writer: Mutex<()>,
}

impl Store {
    /// A store that lives only in memory.
    pub fn in_memory() -> Self {
        Self::with_data(None, StoreData::default())
    }

    /// Opens (or starts) the store file inside `dir`.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(STORE_FILE);
        let data = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| Error::Storage(format!("{}: {e}", path.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => StoreData::default(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self::with_data(Some(path), data))
    }

    fn with_data(path: Option<PathBuf>, data: StoreData) -> Self {
        Store {
            path,
            current: RwLock::new(Arc::new(data)),
            writer: Mutex::new(()),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// A consistent view of the whole store.
    pub fn snapshot(&self) -> Arc<StoreData> {
        self.current.read().unwrap().clone()
    }

    /// Runs `f` against a copy of the data and publishes the copy if `f`
    /// succeeds and the copy was persisted.
    pub fn update<R>(&self, f: impl FnOnce(&mut StoreData) -> Result<R>) -> Result<R> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut data = (*self.snapshot()).clone();
        let out = f(&mut data)?;
        if let Some(path) = &self.path {
            persist(path, &data)?;
        }
        *self.current.write().unwrap() = Arc::new(data);
        Ok(out)
    }
}

fn persist(path: &Path, data: &StoreData) -> Result<()> {
    let bytes = serde_json::to_vec(data).map_err(|e| Error::Storage(e.to_string()))?;
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
