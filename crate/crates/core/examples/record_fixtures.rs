//! Regenerates the `llm/` provider fixtures of every repository under
//! `fixtures/` from its `script.json`.
//!
//! ```sh
//! cargo run -p personaflow-core --example record_fixtures [fixture-dir ...]
//! ```
//!
//! Each repository is analyzed and synced through the engine with scripted
//! answers; every prompt the engine sends is saved with its answer under the
//! prompt's fixture key, so the mock provider can replay the run offline.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use personaflow_core::fixture::{FixtureHost, Script};
use personaflow_core::jobs::JobStage;
use personaflow_core::model::PersonaId;
use personaflow_core::personas::{merge_personas, personas_from_domain, AvatarMode};
use personaflow_core::prompts::Stage;
use personaflow_core::provider::{write_fixture, Fixture, LlmClient, ScriptedProvider};
use personaflow_core::service::{Engine, EngineConfig, GenerationRequest};
use personaflow_core::store::Store;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dirs: Vec<PathBuf> = match std::env::args().skip(1).collect::<Vec<_>>() {
        args if !args.is_empty() => args.into_iter().map(PathBuf::from).collect(),
        _ => {
            let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
            let mut dirs: Vec<PathBuf> = std::fs::read_dir(&root)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("script.json").exists())
                .collect();
            dirs.sort();
            dirs
        }
    };
    for dir in dirs {
        let n = record(&dir)?;
        println!("{}: {n} fixtures", dir.display());
    }
    Ok(())
}

fn record(dir: &Path) -> Result<usize, Box<dyn std::error::Error>> {
    let script = Script::load(dir)?;
    let mut host = FixtureHost::default();
    host.load_dir(dir)?;
    let scripted = Arc::new(script.provider());
    let engine = Engine::new(
        Store::in_memory(),
        Arc::new(host),
        LlmClient::new(Some(scripted.clone())),
        EngineConfig::default(),
    )?;
    let job = engine.submit_generation(GenerationRequest {
        url: script.url.clone(),
        persona_count: script.persona_count,
        external_urls: Vec::new(),
        additional_context: String::new(),
    })?;
    let snap = engine.wait(&job, Duration::from_secs(60))?;
    if snap.stage != JobStage::Done {
        return Err(format!("generation ended {}: {:?}", snap.stage, snap.error).into());
    }
    let repo_id = snap.repo_id.clone();
    let snap = engine.wait(&engine.save(&repo_id)?, Duration::from_secs(60))?;
    if snap.stage != JobStage::Done || !snap.warnings.is_empty() {
        return Err(format!(
            "sync ended {}: {:?} {:?}",
            snap.stage, snap.error, snap.warnings
        )
        .into());
    }

    let mut fixtures: Vec<Fixture> = scripted.answered();
    let state = engine.store().snapshot();
    let state = state.repo(&repo_id)?;
    let active = state.active_personas();
    if let Some(more) = &script.generate_more {
        let p = Arc::new(
            ScriptedProvider::new().stage(Stage::PersonaGeneration, more.response.to_string()),
        );
        let domain = state.domain.as_ref().ok_or("no domain analysis stored")?;
        personas_from_domain(
            &LlmClient::new(Some(p.clone())),
            domain,
            more.count,
            &active,
            AvatarMode::ParameterizedUrl,
        )?;
        fixtures.extend(p.answered());
    }
    for merge in &script.merges {
        let p = Arc::new(ScriptedProvider::new().stage(Stage::Merge, merge.response.to_string()));
        let ids: Vec<PersonaId> = merge
            .personas
            .iter()
            .map(|i| active[i - 1].id.clone())
            .collect();
        merge_personas(
            &LlmClient::new(Some(p.clone())),
            &active,
            &ids,
            merge.guidance.as_deref(),
            AvatarMode::ParameterizedUrl,
        )?;
        fixtures.extend(p.answered());
    }

    let out = dir.join("llm");
    if out.exists() {
        std::fs::remove_dir_all(&out)?;
    }
    std::fs::create_dir_all(&out)?;
    for f in &fixtures {
        write_fixture(&out, f)?;
    }
    Ok(fixtures.len())
}
