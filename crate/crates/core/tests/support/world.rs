//! Offline engine wiring shared by the integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use personaflow_core::fixture::{bundled_dir, load_offline, FixtureHost};
use personaflow_core::jobs::{JobSnapshot, JobStage};
use personaflow_core::model::RepoId;
use personaflow_core::prompts::PromptBundle;
use personaflow_core::provider::{Completion, LlmClient, Provider, StubImageProvider};
use personaflow_core::service::{Engine, EngineConfig, GenerationRequest};
use personaflow_core::store::Store;
use personaflow_core::Result;

pub const SHEETABLE: &str = "https://github.com/SheetAble/SheetAble";
pub const GHOSTSCRIPT: &str = "https://github.com/ArtifexSoftware/ghostpdl";
pub const EXCALIDRAW: &str = "https://github.com/excalidraw/excalidraw";
pub const WAIT: Duration = Duration::from_secs(20);

pub fn fixture_dir(name: &str) -> PathBuf {
    bundled_dir().join(name)
}

pub struct World {
    pub engine: Engine,
    pub host: Arc<FixtureHost>,
}

#[derive(Default)]
pub struct Options {
    pub images: bool,
    pub gate: Option<Arc<Gate>>,
    pub store: Option<Store>,
}

pub fn world() -> World {
    world_with(Options::default())
}

pub fn world_with(opts: Options) -> World {
    world_from(&bundled_dir(), opts)
}

pub fn world_from(root: &Path, opts: Options) -> World {
    let (host, mock) = load_offline(root).expect("fixtures load");
    let host = Arc::new(host);
    let text: Arc<dyn Provider> = match opts.gate {
        Some(gate) => Arc::new(Gated {
            inner: Box::new(mock),
            gate,
        }),
        None => Arc::new(mock),
    };
    let mut llm = LlmClient::new(Some(text));
    if opts.images {
        llm = llm.with_images(Arc::new(StubImageProvider));
    }
    let engine = Engine::new(
        opts.store.unwrap_or_else(Store::in_memory),
        host.clone(),
        llm,
        EngineConfig::default(),
    )
    .expect("engine starts");
    World { engine, host }
}

pub fn generation(url: &str, n: usize) -> GenerationRequest {
    GenerationRequest {
        url: url.into(),
        persona_count: n,
        external_urls: Vec::new(),
        additional_context: String::new(),
    }
}

impl World {
    pub fn wait(&self, job: &str) -> JobSnapshot {
        let snap = self.engine.wait(job, WAIT).expect("job known");
        assert!(
            snap.stage.is_terminal(),
            "job {job} still at {} after {WAIT:?}",
            snap.stage
        );
        snap
    }

    /// Generates `n` personas for `url` and returns the repository id.
    pub fn analyze(&self, url: &str, n: usize) -> RepoId {
        let job = self.engine.submit_generation(generation(url, n)).unwrap();
        let snap = self.wait(&job);
        assert_eq!(
            snap.stage,
            JobStage::Done,
            "generation failed: {:?}",
            snap.error
        );
        snap.repo_id
    }

    /// Generates personas and syncs plus maps the default issue batch.
    pub fn analyze_and_save(&self, url: &str, n: usize) -> RepoId {
        let repo = self.analyze(url, n);
        let snap = self.wait(&self.engine.save(&repo).unwrap());
        assert_eq!(snap.stage, JobStage::Done, "sync failed: {:?}", snap.error);
        repo
    }
}

/// Blocks every provider call until opened.
#[derive(Default)]
pub struct Gate {
    open: Mutex<bool>,
    changed: Condvar,
}

impl Gate {
    pub fn open(&self) {
        *self.open.lock().unwrap() = true;
        self.changed.notify_all();
    }

    fn pass(&self) {
        let mut open = self.open.lock().unwrap();
        while !*open {
            open = self.changed.wait(open).unwrap();
        }
    }
}

struct Gated {
    inner: Box<dyn Provider>,
    gate: Arc<Gate>,
}

impl Provider for Gated {
    fn name(&self) -> &str {
        "gated"
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<Completion> {
        self.gate.pass();
        self.inner.complete(bundle)
    }
}
