//! Background jobs: kinds, stages, snapshots and the worker pool.
//!
//! A job is submitted, stored as `queued`, picked up by a worker and moved
//! through its stages until it ends `done` or `failed`. Callers observe it
//! by polling [`JobSnapshot`]s; a terminal snapshot never changes again.

use std::fmt;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::connector::SyncRequest;
use crate::error::{Error, ErrorClass};
use crate::model::RepoId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Generation,
    Mapping,
    Sync,
}

impl JobKind {
    pub fn as_str(self) -> &'static str {
        match self {
            JobKind::Generation => "generation",
            JobKind::Mapping => "mapping",
            JobKind::Sync => "sync",
        }
    }

    /// Stages a job of this kind passes through, in order, excluding
    /// `failed`.
    pub fn stages(self) -> &'static [JobStage] {
        use JobStage::*;
        match self {
            JobKind::Generation => &[
                Queued,
                FetchReadme,
                ExternalDocs,
                AnalyzeDomain,
                GeneratePersonas,
                Done,
            ],
            JobKind::Mapping => &[Queued, MapIssues, Done],
            JobKind::Sync => &[Queued, SyncIssues, MapIssues, Done],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStage {
    Queued,
    FetchReadme,
    ExternalDocs,
    AnalyzeDomain,
    GeneratePersonas,
    SyncIssues,
    MapIssues,
    Done,
    Failed,
}

impl JobStage {
    pub fn as_str(self) -> &'static str {
        match self {
            JobStage::Queued => "queued",
            JobStage::FetchReadme => "fetch_readme",
            JobStage::ExternalDocs => "external_docs",
            JobStage::AnalyzeDomain => "analyze_domain",
            JobStage::GeneratePersonas => "generate_personas",
            JobStage::SyncIssues => "sync_issues",
            JobStage::MapIssues => "map_issues",
            JobStage::Done => "done",
            JobStage::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobStage::Done | JobStage::Failed)
    }
}

impl fmt::Display for JobStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Percent range each generation stage may report.
pub fn generation_band(stage: JobStage) -> (u8, u8) {
    match stage {
        JobStage::Queued => (0, 0),
        JobStage::FetchReadme => (0, 15),
        JobStage::ExternalDocs => (15, 45),
        JobStage::AnalyzeDomain => (45, 75),
        JobStage::GeneratePersonas => (75, 100),
        JobStage::Done => (100, 100),
        _ => (0, 100),
    }
}

/// Percent range for sync jobs: fetching is the cheap part.
pub fn sync_band(stage: JobStage) -> (u8, u8) {
    match stage {
        JobStage::Queued => (0, 0),
        JobStage::SyncIssues => (0, 30),
        JobStage::MapIssues => (30, 100),
        JobStage::Done => (100, 100),
        _ => (0, 100),
    }
}

/// What the job was asked to do. Persisted so queued jobs survive a restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobSpec {
    Generation {
        url: String,
        persona_count: usize,
        #[serde(default)]
        external_urls: Vec<String>,
        #[serde(default)]
        additional_context: String,
    },
    Mapping {
        repo_id: RepoId,
        #[serde(default)]
        force: bool,
    },
    Sync {
        repo_id: RepoId,
        request: SyncRequest,
    },
}

impl JobSpec {
    pub fn kind(&self) -> JobKind {
        match self {
            JobSpec::Generation { .. } => JobKind::Generation,
            JobSpec::Mapping { .. } => JobKind::Mapping,
            JobSpec::Sync { .. } => JobKind::Sync,
        }
    }
}

/// Wire form of an error class, for job snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    Validation,
    NotFound,
    Conflict,
    Provider,
    Upstream,
    Internal,
}

impl From<ErrorClass> for FailureClass {
    fn from(c: ErrorClass) -> Self {
        match c {
            ErrorClass::Validation => FailureClass::Validation,
            ErrorClass::NotFound => FailureClass::NotFound,
            ErrorClass::Conflict => FailureClass::Conflict,
            ErrorClass::Provider => FailureClass::Provider,
            ErrorClass::Upstream => FailureClass::Upstream,
            ErrorClass::Internal => FailureClass::Internal,
        }
    }
}

/// What a status poll returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSnapshot {
    pub job_id: String,
    pub kind: JobKind,
    pub repo_id: RepoId,
    pub stage: JobStage,
    pub percent: u8,
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_class: Option<FailureClass>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl JobSnapshot {
    pub fn queued(job_id: String, kind: JobKind, repo_id: RepoId) -> Self {
        JobSnapshot {
            job_id,
            kind,
            repo_id,
            stage: JobStage::Queued,
            percent: 0,
            error: None,
            error_class: None,
            started_at: Utc::now(),
            finished_at: None,
            warnings: Vec::new(),
        }
    }

    /// Moves to `stage` at `percent`. Terminal snapshots ignore the call,
    /// the stage never moves backwards and the percent never drops.
    /// Returns whether anything changed.
    pub fn advance(&mut self, stage: JobStage, percent: u8) -> bool {
        if self.stage.is_terminal() {
            return false;
        }
        let order = self.kind.stages();
        let pos = |s: JobStage| order.iter().position(|x| *x == s);
        let stage = match (pos(self.stage), pos(stage)) {
            (Some(cur), Some(new)) if new < cur => self.stage,
            (_, None) if stage != JobStage::Failed => self.stage,
            _ => stage,
        };
        let percent = percent.min(100).max(self.percent);
        let changed = stage != self.stage || percent != self.percent;
        self.stage = stage;
        self.percent = percent;
        if stage.is_terminal() {
            self.finished_at = Some(Utc::now());
        }
        changed
    }

    pub fn fail(&mut self, error: &Error) -> bool {
        if self.stage.is_terminal() {
            return false;
        }
        self.stage = JobStage::Failed;
        self.error = Some(error.to_string());
        self.error_class = Some(error.class().into());
        self.finished_at = Some(Utc::now());
        true
    }

    pub fn finish(&mut self) -> bool {
        self.advance(JobStage::Done, 100)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub snapshot: JobSnapshot,
    pub spec: JobSpec,
}

/// Fixed-size pool of threads that run job ids handed to [`WorkerPool::enqueue`].
/// Dropping the pool closes the queue and joins the workers once they finish
/// what they hold.
pub struct WorkerPool {
    tx: Mutex<Option<Sender<String>>>,
    workers: Vec<JoinHandle<()>>,
}

impl WorkerPool {
    pub fn new(size: usize, run: Arc<dyn Fn(String) + Send + Sync>) -> Self {
        let (tx, rx) = channel::<String>();
        let rx = Arc::new(Mutex::new(rx));
        let workers = (0..size.max(1))
            .map(|i| {
                let rx: Arc<Mutex<Receiver<String>>> = rx.clone();
                let run = run.clone();
                std::thread::Builder::new()
                    .name(format!("personaflow-job-{i}"))
                    .spawn(move || loop {
                        let next = rx.lock().unwrap().recv();
                        match next {
                            Ok(id) => run(id),
                            Err(_) => break,
                        }
                    })
                    .expect("spawn job worker")
            })
            .collect();
        WorkerPool {
            tx: Mutex::new(Some(tx)),
            workers,
        }
    }

    pub fn enqueue(&self, job_id: String) {
        if let Some(tx) = self.tx.lock().unwrap().as_ref() {
            let _ = tx.send(job_id);
        }
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.tx.lock().unwrap().take();
        let me = std::thread::current().id();
        for w in self.workers.drain(..) {
            // The last engine handle can be released by a worker itself.
            if w.thread().id() != me {
                let _ = w.join();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::time::Duration;

    use proptest::prelude::*;

    use super::*;

    fn snap(kind: JobKind) -> JobSnapshot {
        JobSnapshot::queued("j".into(), kind, RepoId::new("o", "r"))
    }

    #[test]
    fn generation_bands_tile_zero_to_hundred() {
        let stages = &JobKind::Generation.stages()[1..5];
        assert_eq!(generation_band(stages[0]).0, 0);
        for w in stages.windows(2) {
            assert_eq!(generation_band(w[0]).1, generation_band(w[1]).0);
        }
        assert_eq!(generation_band(stages[3]).1, 100);
        let (lo, hi) = generation_band(JobStage::AnalyzeDomain);
        assert!((lo..=hi).contains(&70));
    }

    #[test]
    fn terminal_snapshot_is_frozen() {
        let mut s = snap(JobKind::Generation);
        s.advance(JobStage::FetchReadme, 5);
        assert!(s.finish());
        let frozen = s.clone();
        assert!(!s.advance(JobStage::AnalyzeDomain, 50));
        assert!(!s.fail(&Error::EmptyCorpus));
        assert_eq!(s, frozen);
    }

    #[test]
    fn failure_records_class() {
        let mut s = snap(JobKind::Sync);
        s.advance(JobStage::SyncIssues, 10);
        s.fail(&Error::Provider("down".into()));
        assert_eq!(s.stage, JobStage::Failed);
        assert_eq!(s.error_class, Some(FailureClass::Provider));
        assert_eq!(s.percent, 10);
        assert!(s.finished_at.is_some());
    }

    #[test]
    fn foreign_stage_is_ignored() {
        let mut s = snap(JobKind::Mapping);
        s.advance(JobStage::AnalyzeDomain, 40);
        assert_eq!(s.stage, JobStage::Queued);
        assert_eq!(s.percent, 40);
    }

    proptest! {
        #[test]
        fn percent_and_stage_never_go_back(steps in proptest::collection::vec((0usize..6, 0u8..=120), 0..30)) {
            let mut s = snap(JobKind::Generation);
            let order = JobKind::Generation.stages();
            let mut last_pos = 0;
            let mut last_pct = 0;
            for (i, pct) in steps {
                s.advance(order[i], pct);
                let pos = order.iter().position(|x| *x == s.stage).unwrap();
                prop_assert!(pos >= last_pos);
                prop_assert!(s.percent >= last_pct && s.percent <= 100);
                last_pos = pos;
                last_pct = s.percent;
            }
        }
    }

    #[test]
    fn pool_runs_every_job() {
        let seen = Arc::new(AtomicUsize::new(0));
        let counter = seen.clone();
        let pool = WorkerPool::new(
            3,
            Arc::new(move |_id| {
                std::thread::sleep(Duration::from_millis(2));
                counter.fetch_add(1, Ordering::SeqCst);
            }),
        );
        for i in 0..20 {
            pool.enqueue(format!("j{i}"));
        }
        drop(pool);
        assert_eq!(seen.load(Ordering::SeqCst), 20);
    }
}
