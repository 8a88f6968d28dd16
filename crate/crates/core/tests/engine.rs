//! Workflow tests for the engine against the bundled offline fixtures.

#[path = "support/world.rs"]
mod world;

use std::collections::BTreeSet;
use std::sync::{Arc, Barrier};

use chrono::{DateTime, Utc};
use personaflow_core::connector::SyncRequest;
use personaflow_core::http::HttpResponse;
use personaflow_core::jobs::{FailureClass, JobKind, JobRecord, JobSnapshot, JobSpec, JobStage};
use personaflow_core::model::{
    validate_persona, AvatarKind, ConfidenceBand, Origin, PersonaId, Provenance,
};
use personaflow_core::personas::PersonaPatch;
use personaflow_core::provider::CallKind;
use personaflow_core::service::{IssueListing, IssueQuery, IssueView};
use personaflow_core::store::Store;
use personaflow_core::Error;
use world::*;

fn stages_of(trace: &[(JobStage, u8)]) -> Vec<JobStage> {
    let mut out: Vec<JobStage> = Vec::new();
    for (s, _) in trace {
        if out.last() != Some(s) {
            out.push(*s);
        }
    }
    out
}

fn persona_by_name(w: &World, repo: &personaflow_core::model::RepoId, name: &str) -> PersonaId {
    w.engine
        .personas(repo, false)
        .unwrap()
        .into_iter()
        .find(|p| p.persona.profile.name == name)
        .unwrap_or_else(|| panic!("no persona {name}"))
        .persona
        .id
}

#[test]
fn generation_walks_the_stages_in_order_with_rising_percent() {
    let w = world();
    let job = w
        .engine
        .submit_generation(generation(SHEETABLE, 4))
        .unwrap();
    let snap = w.wait(&job);
    assert_eq!(snap.stage, JobStage::Done, "{:?}", snap.error);
    assert_eq!(snap.percent, 100);
    assert!(snap.finished_at.is_some());
    let trace = w.engine.job_trace(&job).unwrap();
    assert_eq!(
        stages_of(&trace),
        vec![
            JobStage::Queued,
            JobStage::FetchReadme,
            JobStage::ExternalDocs,
            JobStage::AnalyzeDomain,
            JobStage::GeneratePersonas,
            JobStage::Done,
        ]
    );
    assert!(trace.windows(2).all(|w| w[0].1 <= w[1].1), "{trace:?}");
    assert!(trace.contains(&(JobStage::AnalyzeDomain, 70)));
    for (stage, pct) in &trace {
        let (lo, hi) = personaflow_core::jobs::generation_band(*stage);
        assert!((lo..=hi).contains(pct), "{stage} at {pct}");
    }
}

#[test]
fn generation_produces_the_fixture_personas() {
    let w = world();
    let repo = w.analyze(SHEETABLE, 4);
    let personas = w.engine.personas(&repo, false).unwrap();
    let occupations: Vec<String> = personas
        .iter()
        .map(|p| p.persona.profile.occupation.to_lowercase())
        .collect();
    for role in ["composer", "educator", "conductor", "student"] {
        assert_eq!(
            occupations.iter().filter(|o| o.contains(role)).count(),
            1,
            "{role} in {occupations:?}"
        );
    }
    for p in &personas {
        assert!(validate_persona(&p.persona).is_empty());
        assert_eq!(p.persona.provenance, Provenance::AiGenerated);
        assert_eq!(p.persona.avatar.kind, AvatarKind::ParameterizedUrl);
        assert!(!p.archived);
    }
    let text_calls = w
        .engine
        .ledger()
        .iter()
        .filter(|c| c.kind == CallKind::Text)
        .count();
    assert_eq!(text_calls, 4);
}

#[test]
fn image_mode_makes_one_image_call_per_persona() {
    let w = world_with(Options {
        images: true,
        ..Options::default()
    });
    let repo = w.analyze(SHEETABLE, 4);
    let ledger = w.engine.ledger();
    assert_eq!(
        ledger.iter().filter(|c| c.kind == CallKind::Image).count(),
        4
    );
    assert_eq!(
        ledger.iter().filter(|c| c.kind == CallKind::Text).count(),
        4
    );
    for p in w.engine.personas(&repo, false).unwrap() {
        assert_eq!(p.persona.avatar.kind, AvatarKind::GeneratedImage);
    }
}

#[test]
fn save_syncs_and_maps_twenty_issues_with_one_call_each() {
    let w = world();
    let repo = w.analyze(SHEETABLE, 4);
    let job = w.engine.save(&repo).unwrap();
    let snap = w.wait(&job);
    assert_eq!(snap.stage, JobStage::Done, "{:?}", snap.error);
    assert_eq!(snap.kind, JobKind::Sync);
    assert!(snap.warnings.is_empty(), "{:?}", snap.warnings);
    let calls = w.engine.llm().ledger().for_job(&job);
    assert_eq!(calls.len(), 20);
    assert!(calls
        .iter()
        .all(|c| c.stage == personaflow_core::prompts::Stage::IssueMapping));
    let status = w.engine.mapping_status(&repo).unwrap();
    assert_eq!((status.total, status.pending), (20, 0));
    assert_eq!(status.mapped + status.unmapped, 20);

    let detail = w.engine.issue_detail(&repo, 55).unwrap();
    let priya = persona_by_name(&w, &repo, "Priya Singh");
    assert_eq!(detail.primary_persona_id.as_ref(), Some(&priya));
    let a = &detail.associations[0];
    assert_eq!(
        (a.association.relevance_score, a.band, a.percent),
        (0.85, ConfidenceBand::High, 85)
    );
    assert!(!a.association.rationale.is_empty());
    assert_eq!(a.persona_name, "Priya Singh");
}

#[test]
fn every_provider_call_belongs_to_exactly_one_job() {
    let w = world();
    let gen = w
        .engine
        .submit_generation(generation(SHEETABLE, 4))
        .unwrap();
    let repo = w.wait(&gen).repo_id;
    let sync = w.engine.save(&repo).unwrap();
    w.wait(&sync);
    let ledger = w.engine.ledger();
    assert_eq!(ledger.len(), 24);
    assert!(ledger.iter().all(|c| c.job_id.is_some()));
    let g = ledger
        .iter()
        .filter(|c| c.job_id.as_deref() == Some(gen.as_str()))
        .count();
    let s = ledger
        .iter()
        .filter(|c| c.job_id.as_deref() == Some(sync.as_str()))
        .count();
    assert_eq!((g, s), (4, 20));
}

#[test]
fn analytics_reflect_the_synced_fixture() {
    let w = world();
    let repo = w.analyze_and_save(SHEETABLE, 4);
    let a = w.engine.analytics(&repo).unwrap();
    assert_eq!(a.total_issues, 20);
    assert_eq!(a.active_personas, 4);
    assert_eq!(a.repo_stars, 420);
    assert_eq!(a.coverage_rate, 1.0);
    assert_eq!(a.label_distribution["(none)"], 1);
    assert_eq!(a.label_distribution["feature"], 7);
    assert_eq!(a.label_distribution["bug"], 6);
}

#[test]
fn excalidraw_reports_stars_from_the_host() {
    let w = world();
    let repo = w.analyze_and_save(EXCALIDRAW, 4);
    assert_eq!(w.engine.analytics(&repo).unwrap().repo_stars, 114_476);
    let summary = w.engine.repo(&repo).unwrap();
    assert_eq!(summary.repo.forks, 12_158);
}

#[test]
fn terminal_snapshots_do_not_change() {
    let w = world();
    let job = w
        .engine
        .submit_generation(generation(EXCALIDRAW, 4))
        .unwrap();
    let first = w.wait(&job);
    let second = w.engine.job_status(&job).unwrap();
    assert_eq!(first, second);
}

#[test]
fn submit_returns_before_any_provider_call() {
    let gate = Arc::new(Gate::default());
    let w = world_with(Options {
        gate: Some(gate.clone()),
        ..Options::default()
    });
    let job = w
        .engine
        .submit_generation(generation(SHEETABLE, 4))
        .unwrap();
    let snap = w.engine.job_status(&job).unwrap();
    assert!(!snap.stage.is_terminal());
    assert!(w.engine.ledger().is_empty());
    gate.open();
    assert_eq!(w.wait(&job).stage, JobStage::Done);
}

#[test]
fn concurrent_generation_for_one_repository_admits_exactly_one() {
    let gate = Arc::new(Gate::default());
    let w = world_with(Options {
        gate: Some(gate.clone()),
        ..Options::default()
    });
    let barrier = Arc::new(Barrier::new(8));
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let barrier = barrier.clone();
                let engine = w.engine.clone();
                s.spawn(move || {
                    barrier.wait();
                    engine.submit_generation(generation(SHEETABLE, 4))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let accepted: Vec<&String> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    assert_eq!(accepted.len(), 1);
    assert!(results
        .iter()
        .filter_map(|r| r.as_ref().err())
        .all(|e| matches!(e, Error::BusyRepository(_))));
    // A different repository is not blocked.
    let other = w
        .engine
        .submit_generation(generation(EXCALIDRAW, 4))
        .unwrap();
    gate.open();
    assert_eq!(w.wait(accepted[0]).stage, JobStage::Done);
    assert_eq!(w.wait(&other).stage, JobStage::Done);
    // Once finished, the repository accepts a new run.
    assert!(w.engine.submit_generation(generation(SHEETABLE, 4)).is_ok());
}

#[test]
fn submit_validates_parameters() {
    let w = world();
    for n in [0, 11] {
        assert!(matches!(
            w.engine.submit_generation(generation(SHEETABLE, n)),
            Err(Error::InvalidParams(_))
        ));
    }
    assert!(matches!(
        w.engine.submit_generation(generation("not a url", 4)),
        Err(Error::MalformedUrl(_))
    ));
    let mut req = generation(SHEETABLE, 4);
    req.external_urls = vec!["ftp://example.org/doc".into()];
    assert!(matches!(
        w.engine.submit_generation(req),
        Err(Error::InvalidParams(_))
    ));
    let unknown = personaflow_core::model::RepoId::new("no", "where");
    assert!(matches!(
        w.engine.submit_mapping(&unknown, false),
        Err(Error::UnknownRepository(_))
    ));
    assert!(matches!(
        w.engine.job_status("nope"),
        Err(Error::UnknownJob(_))
    ));
    assert!(w.engine.jobs().is_empty());
}

#[test]
fn mapping_without_personas_is_rejected() {
    let w = world();
    let repo = w.analyze(SHEETABLE, 4);
    for p in w.engine.personas(&repo, false).unwrap() {
        w.engine.archive_persona(&p.persona.id, None).unwrap();
    }
    assert!(matches!(
        w.engine.submit_mapping(&repo, false),
        Err(Error::InvalidParams(_))
    ));
}

#[test]
fn failed_link_fetch_degrades_to_a_warning() {
    let w = world();
    // The second discovered link of this fixture answers 404.
    let job = w
        .engine
        .submit_generation(generation(GHOSTSCRIPT, 4))
        .unwrap();
    let snap = w.wait(&job);
    assert_eq!(snap.stage, JobStage::Done, "{:?}", snap.error);
    assert!(
        snap.warnings.iter().any(|m| m.contains("ghostscript.com")),
        "{:?}",
        snap.warnings
    );
}

#[test]
fn provider_errors_fail_the_job_with_the_provider_class() {
    let w = world();
    // A failing link changes the corpus, so no recorded answer matches.
    w.host.inject_fault(
        "https://sheetable.net",
        10,
        Some(HttpResponse::new(500, "down")),
    );
    let job = w
        .engine
        .submit_generation(generation(SHEETABLE, 4))
        .unwrap();
    let snap = w.wait(&job);
    assert_eq!(snap.stage, JobStage::Failed);
    assert_eq!(snap.error_class, Some(FailureClass::Provider));
    assert!(
        snap.warnings.iter().any(|m| m.contains("sheetable.net")),
        "{:?}",
        snap.warnings
    );
    assert!(
        w.engine.personas(&snap.repo_id, true).is_err()
            || w.engine.personas(&snap.repo_id, true).unwrap().is_empty()
    );
}

#[test]
fn missing_readme_and_documents_fails_with_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("host.json"),
        r#"{"repo": {"name": "bare", "owner": {"login": "nobody"}, "default_branch": "main"}}"#,
    )
    .unwrap();
    let w = world_from(dir.path(), Options::default());
    let job = w
        .engine
        .submit_generation(generation("https://github.com/nobody/bare", 3))
        .unwrap();
    let snap = w.wait(&job);
    assert_eq!(snap.stage, JobStage::Failed);
    assert_eq!(snap.error_class, Some(FailureClass::Validation));
    assert!(snap.error.unwrap().contains("nothing to analyze"));
    assert!(snap.warnings.iter().any(|m| m.contains("no readme")));
    assert!(w.engine.ledger().is_empty());
    let trace = w.engine.job_trace(&job).unwrap();
    assert_eq!(trace.last().unwrap().0, JobStage::Failed);
    assert!(trace.windows(2).all(|w| w[0].1 <= w[1].1));
}

#[test]
fn unknown_repository_fails_the_job_as_not_found() {
    let w = world();
    let job = w
        .engine
        .submit_generation(generation("https://github.com/nobody/missing", 3))
        .unwrap();
    let snap = w.wait(&job);
    assert_eq!(snap.stage, JobStage::Failed);
    assert_eq!(snap.error_class, Some(FailureClass::NotFound));
}

#[test]
fn replaying_a_sync_changes_nothing() {
    let w = world();
    let repo = w.analyze_and_save(SHEETABLE, 4);
    let requests = [
        SyncRequest::default(),
        SyncRequest::by_ids(vec![3, 55, 77, 999]),
        SyncRequest::by_labels(vec!["bug".into()], 50),
        SyncRequest::by_date_range(Some("2023-01-01T00:00:00Z".parse().unwrap()), None, 50),
    ];
    for req in requests {
        let before = w.engine.store().snapshot().repos.clone();
        let snap = w.wait(&w.engine.submit_sync(&repo, req.clone()).unwrap());
        assert_eq!(snap.stage, JobStage::Done, "{req:?}: {:?}", snap.error);
        assert_eq!(w.engine.store().snapshot().repos, before, "{req:?}");
    }
    assert_eq!(w.engine.ledger().len(), 24);
}

#[test]
fn all_new_fetches_only_issues_after_the_newest_stored_one() {
    let w = world();
    let repo = w.analyze(SHEETABLE, 4);
    let until: DateTime<Utc> = "2023-12-31T00:00:00Z".parse().unwrap();
    let first = w.wait(
        &w.engine
            .submit_sync(&repo, SyncRequest::by_date_range(None, Some(until), 50))
            .unwrap(),
    );
    assert_eq!(first.stage, JobStage::Done);
    assert_eq!(w.engine.repo(&repo).unwrap().issues, 16);
    let job = w.engine.submit_sync(&repo, SyncRequest::default()).unwrap();
    assert_eq!(w.wait(&job).stage, JobStage::Done);
    assert_eq!(w.engine.repo(&repo).unwrap().issues, 20);
    // #55 sits on the boundary and is already stored and mapped.
    assert_eq!(w.engine.llm().ledger().for_job(&job).len(), 4);
}

#[test]
fn manual_decisions_survive_a_forced_remap() {
    let w = world();
    let repo = w.analyze_and_save(SHEETABLE, 4);
    let carlos = persona_by_name(&w, &repo, "Carlos Rivera");
    let priya = persona_by_name(&w, &repo, "Priya Singh");
    // #55 was matched to Priya only.
    let d = w
        .engine
        .override_associations(
            &repo,
            55,
            std::slice::from_ref(&carlos),
            std::slice::from_ref(&priya),
            None,
        )
        .unwrap();
    let ids: Vec<(&PersonaId, Origin)> = d
        .associations
        .iter()
        .map(|a| (&a.association.persona_id, a.association.origin))
        .collect();
    assert_eq!(ids, vec![(&carlos, Origin::Manual)]);
    assert_eq!(d.primary_persona_id.as_ref(), Some(&carlos));

    let job = w.engine.submit_mapping(&repo, true).unwrap();
    assert_eq!(w.wait(&job).stage, JobStage::Done);
    assert_eq!(w.engine.llm().ledger().for_job(&job).len(), 20);
    let after = w.engine.issue_detail(&repo, 55).unwrap();
    let live: Vec<(&PersonaId, Origin)> = after
        .associations
        .iter()
        .map(|a| (&a.association.persona_id, a.association.origin))
        .collect();
    assert_eq!(live, vec![(&carlos, Origin::Manual)]);
}

#[test]
fn override_checks_versions_and_references() {
    let w = world();
    let repo = w.analyze_and_save(SHEETABLE, 4);
    let carlos = persona_by_name(&w, &repo, "Carlos Rivera");
    let v = w.engine.issue_detail(&repo, 7).unwrap().mapping_version;
    assert!(matches!(
        w.engine
            .override_associations(&repo, 7, std::slice::from_ref(&carlos), &[], Some(v - 1)),
        Err(Error::StaleVersion { .. })
    ));
    assert!(matches!(
        w.engine
            .override_associations(&repo, 7, &[PersonaId::from("ghost")], &[], None),
        Err(Error::UnknownPersona(_))
    ));
    assert!(matches!(
        w.engine
            .override_associations(&repo, 4242, std::slice::from_ref(&carlos), &[], None),
        Err(Error::UnknownIssue(4242))
    ));
    let d = w
        .engine
        .override_associations(&repo, 7, &[carlos], &[], Some(v))
        .unwrap();
    assert!(d.mapping_version > v);
    assert_eq!(d.associations.len(), 2);
}

#[test]
fn persona_edits_use_optimistic_versions() {
    let w = world();
    let repo = w.analyze(SHEETABLE, 4);
    let p = w.engine.personas(&repo, false).unwrap().remove(0);
    let patch = PersonaPatch {
        quote: Some("A new quote".into()),
        ..PersonaPatch::default()
    };
    let edited = w
        .engine
        .edit_persona(&p.persona.id, &patch, Some(p.version))
        .unwrap();
    assert!(edited.version > p.version);
    assert!(edited.persona.edited);
    assert_eq!(edited.persona.profile.quote, "A new quote");
    assert!(matches!(
        w.engine
            .edit_persona(&p.persona.id, &patch, Some(p.version)),
        Err(Error::StaleVersion { .. })
    ));
    assert_eq!(w.engine.persona(&p.persona.id).unwrap(), edited);
    let bad = PersonaPatch {
        name: Some("  ".into()),
        ..PersonaPatch::default()
    };
    assert!(matches!(
        w.engine.edit_persona(&p.persona.id, &bad, None),
        Err(Error::InvalidPatch(_))
    ));
}

#[test]
fn archived_personas_are_hidden_but_retrievable() {
    let w = world();
    let repo = w.analyze_and_save(SHEETABLE, 4);
    let priya = persona_by_name(&w, &repo, "Priya Singh");
    let before = w.engine.analytics(&repo).unwrap();
    let archived = w.engine.archive_persona(&priya, None).unwrap();
    assert!(archived.archived);
    assert_eq!(w.engine.personas(&repo, false).unwrap().len(), 3);
    assert_eq!(w.engine.personas(&repo, true).unwrap().len(), 4);
    assert!(w.engine.persona(&priya).unwrap().archived);
    let after = w.engine.analytics(&repo).unwrap();
    assert_eq!(after.active_personas, 3);
    assert!(after.coverage_rate < before.coverage_rate);
    assert!(!after.persona_coverage.contains_key(&priya));
    assert!(w
        .engine
        .issue_detail(&repo, 55)
        .unwrap()
        .associations
        .is_empty());
    assert!(matches!(
        w.engine.archive_persona(&priya, None),
        Err(Error::UnknownPersona(_))
    ));
}

#[test]
fn merge_replaces_sources_with_one_persona() {
    let w = world();
    let repo = w.analyze(GHOSTSCRIPT, 4);
    let active = w.engine.personas(&repo, false).unwrap();
    let ids = vec![active[0].persona.id.clone(), active[2].persona.id.clone()];
    let merged = w.engine.merge(&ids, None).unwrap();
    assert_eq!(
        merged.persona.profile.name,
        "Technical Integration Specialist"
    );
    assert_eq!(merged.persona.provenance, Provenance::Merged);
    assert_eq!(merged.persona.source_persona_ids, ids);
    let expected = (active[0].persona.profile.confidence_score
        + active[2].persona.profile.confidence_score)
        / 2.0;
    assert!((merged.persona.profile.confidence_score - expected).abs() < 1e-12);
    assert_eq!(w.engine.personas(&repo, false).unwrap().len(), 3);
    for id in &ids {
        assert!(w.engine.persona(id).unwrap().archived);
    }
    let survivor = [active[1].persona.id.clone()];
    assert!(matches!(
        w.engine.merge(&survivor, None),
        Err(Error::FewerThanTwo)
    ));
    assert!(matches!(
        w.engine.merge(&ids, None),
        Err(Error::UnknownPersona(_))
    ));
}

#[test]
fn generate_more_and_regenerate_reuse_the_stored_analysis() {
    let w = world();
    let repo = w.analyze(SHEETABLE, 4);
    let added = w.engine.generate_more(&repo, 1).unwrap();
    assert_eq!(added.len(), 1);
    assert_eq!(added[0].persona.profile.name, "Hannah Becker");
    assert_eq!(w.engine.personas(&repo, false).unwrap().len(), 5);
    assert_eq!(w.engine.ledger().len(), 5);

    // Keep Hannah by editing her; the four originals are replaced.
    let edit = PersonaPatch {
        tagline: Some("Directs the St. Thomas volunteer choir".into()),
        ..PersonaPatch::default()
    };
    w.engine
        .edit_persona(&added[0].persona.id, &edit, None)
        .unwrap();
    let old: BTreeSet<PersonaId> = w
        .engine
        .personas(&repo, false)
        .unwrap()
        .into_iter()
        .map(|p| p.persona.id)
        .collect();
    let err = w.engine.regenerate_all(&repo).unwrap_err();
    // The kept persona changes the prompt, and no answer was recorded for it.
    assert!(matches!(err, Error::Provider(_)), "{err}");
    assert_eq!(w.engine.personas(&repo, false).unwrap().len(), 5);

    w.engine
        .archive_persona(&added[0].persona.id, None)
        .unwrap();
    let fresh = w.engine.regenerate_all(&repo).unwrap();
    assert_eq!(fresh.len(), 4);
    let active = w.engine.personas(&repo, false).unwrap();
    assert_eq!(active.len(), 4);
    assert!(active.iter().all(|p| !old.contains(&p.persona.id)));
}

#[test]
fn custom_personas_are_manual_with_full_confidence() {
    let w = world();
    let repo = w.analyze(EXCALIDRAW, 4);
    let mut profile = w.engine.personas(&repo, false).unwrap()[0]
        .persona
        .profile
        .clone();
    profile.name = "Kim Custom".into();
    profile.age = 19;
    profile.confidence_score = 0.2;
    let p = w.engine.create_custom(&repo, profile).unwrap();
    assert_eq!(p.persona.provenance, Provenance::Manual);
    assert_eq!(p.persona.profile.confidence_score, 1.0);
    assert_eq!(w.engine.personas(&repo, false).unwrap().len(), 5);
}

#[test]
fn issue_views_group_and_filter() {
    let w = world();
    let repo = w.analyze_and_save(SHEETABLE, 4);
    let all = w.engine.issues(&repo, &IssueQuery::default()).unwrap();
    let IssueListing::Github { issues } = all else {
        panic!("github view")
    };
    assert_eq!(issues.len(), 20);
    let row = issues.iter().find(|r| r.issue.number == 12).unwrap();
    assert_eq!(row.badges[0].persona_name, "Carlos Rivera");
    assert_eq!(row.badges[0].percent, 90);

    let high = IssueQuery {
        confidence_band: Some(ConfidenceBand::High),
        ..IssueQuery::default()
    };
    let IssueListing::Github { issues } = w.engine.issues(&repo, &high).unwrap() else {
        panic!()
    };
    assert!(issues
        .iter()
        .all(|r| r.badges.iter().any(|b| b.band == ConfidenceBand::High)));
    assert!(issues.iter().all(|r| r.issue.number != 27));

    let by_persona = IssueQuery {
        view: IssueView::Persona,
        ..IssueQuery::default()
    };
    let IssueListing::Persona { groups, unassigned } = w.engine.issues(&repo, &by_persona).unwrap()
    else {
        panic!()
    };
    assert_eq!(groups.len(), 4);
    let counts: Vec<(&str, usize)> = groups
        .iter()
        .map(|g| (g.persona_name.as_str(), g.count))
        .collect();
    assert_eq!(
        counts,
        vec![
            ("Akira Nakamura", 9),
            ("Priya Singh", 7),
            ("Carlos Rivera", 6),
            ("Fatima Hassan", 7)
        ]
    );
    assert!(unassigned.is_empty());

    // Without Priya, the issues only she matched fall out of every group.
    let priya = persona_by_name(&w, &repo, "Priya Singh");
    w.engine.archive_persona(&priya, None).unwrap();
    let IssueListing::Persona { groups, unassigned } = w.engine.issues(&repo, &by_persona).unwrap()
    else {
        panic!()
    };
    assert_eq!(groups.len(), 3);
    let unassigned: Vec<u64> = unassigned.iter().map(|r| r.issue.number).collect();
    assert_eq!(unassigned, vec![21, 41, 48, 55]);

    let closed = IssueQuery {
        state: Some(personaflow_core::model::IssueState::Closed),
        ..IssueQuery::default()
    };
    let IssueListing::Github { issues } = w.engine.issues(&repo, &closed).unwrap() else {
        panic!()
    };
    assert!(issues.is_empty());
}

#[test]
fn restart_fails_interrupted_jobs_and_runs_queued_ones() {
    let dir = tempfile::tempdir().unwrap();
    {
        let store = Store::open(dir.path()).unwrap();
        store
            .update(|d| {
                let repo = personaflow_core::model::RepoId::new("SheetAble", "SheetAble");
                let mut running =
                    JobSnapshot::queued("running".into(), JobKind::Generation, repo.clone());
                running.advance(JobStage::ExternalDocs, 20);
                let spec = JobSpec::Generation {
                    url: SHEETABLE.into(),
                    persona_count: 4,
                    external_urls: vec![],
                    additional_context: String::new(),
                };
                d.jobs.insert(
                    "running".into(),
                    JobRecord {
                        snapshot: running,
                        spec: spec.clone(),
                    },
                );
                let queued = JobSnapshot::queued("waiting".into(), JobKind::Generation, repo);
                d.jobs.insert(
                    "waiting".into(),
                    JobRecord {
                        snapshot: queued,
                        spec,
                    },
                );
                Ok(())
            })
            .unwrap();
    }
    let w = world_with(Options {
        store: Some(Store::open(dir.path()).unwrap()),
        ..Options::default()
    });
    let interrupted = w.engine.job_status("running").unwrap();
    assert_eq!(interrupted.stage, JobStage::Failed);
    assert_eq!(interrupted.percent, 20);
    assert!(interrupted.error.unwrap().contains("interrupted"));
    assert_eq!(w.wait("waiting").stage, JobStage::Done);
    drop(w);
    // Everything survives another restart.
    let again = world_with(Options {
        store: Some(Store::open(dir.path()).unwrap()),
        ..Options::default()
    });
    let repo = personaflow_core::model::RepoId::new("sheetable", "sheetable");
    assert_eq!(again.engine.personas(&repo, false).unwrap().len(), 4);
}
