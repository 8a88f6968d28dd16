//! Writes a small, fully mapped store straight to disk so CLI tests can run
//! without a generation job.

#![allow(dead_code)]

use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use personaflow_core::model::{
    Association, AvatarKind, AvatarRef, ExperienceLevel, ImpactLevel, IssuePersonaMapping,
    IssueRecord, IssueState, Origin, Persona, PersonaId, PersonaProfile, Provenance, RepoId,
    RepositoryRef,
};
use personaflow_core::store::Store;

pub const SEED_REPO: &str = "acme/widgets";

pub struct Seeded {
    pub repo: RepoId,
    pub personas: Vec<PersonaId>,
    pub issues: Vec<u64>,
}

fn at(day: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, day, 12, 0, 0).unwrap()
}

fn persona(i: usize) -> Persona {
    let id = PersonaId(format!("seed-persona-{i}"));
    Persona {
        id: id.clone(),
        profile: PersonaProfile {
            name: format!("Seed Persona {i}"),
            age: 30 + i as u32,
            occupation: format!("Occupation {i}"),
            location: "Lisbon, Portugal".into(),
            quote: "I want it to just work.".into(),
            tagline: "Pragmatic user".into(),
            background: "Uses the project every week.".into(),
            personality_traits: vec!["patient".into()],
            goals: vec![format!("goal {i}")],
            pain_points: vec![format!("pain {i}")],
            technical_skills: vec!["shell".into()],
            experience_level: ExperienceLevel::Intermediate,
            confidence_score: 0.8,
            tags: Vec::new(),
        },
        provenance: Provenance::Manual,
        edited: false,
        source_persona_ids: Vec::new(),
        avatar: AvatarRef {
            kind: AvatarKind::ParameterizedUrl,
            locator: format!("https://avatars.example/{id}.png"),
            seed_inputs: Default::default(),
        },
        created_at: at(1),
        updated_at: at(1),
    }
}

fn issue(number: u64) -> IssueRecord {
    IssueRecord {
        number,
        title: format!("Seeded issue {number}"),
        body: String::new(),
        labels: vec![if number.is_multiple_of(2) {
            "bug"
        } else {
            "feature"
        }
        .into()],
        state: IssueState::Open,
        created_at: at(number as u32),
        updated_at: at(number as u32),
        synced_at: at(20),
    }
}

fn mapping(number: u64, persona: &PersonaId) -> IssuePersonaMapping {
    IssuePersonaMapping {
        issue_number: number,
        associations: vec![Association {
            persona_id: persona.clone(),
            origin: Origin::AiSuggested,
            relevance_score: 0.85,
            matched_goals: Vec::new(),
            matched_pain_points: Vec::new(),
            use_case_fit: String::new(),
            impact_level: ImpactLevel::Medium,
            rationale: "seeded".into(),
            tombstoned: false,
        }],
        primary_persona_id: Some(persona.clone()),
        confidence: 0.85,
        reasoning: "seeded".into(),
        analysis_notes: None,
    }
}

/// Ten issues, five personas, every issue mapped to one persona.
pub fn seed(dir: &Path) -> Seeded {
    let store = Store::open(dir).unwrap();
    store
        .update(|data| {
            let repo = data.upsert_repo(RepositoryRef {
                host: "https://github.com".into(),
                owner: "acme".into(),
                name: "widgets".into(),
                stars: 7,
                forks: 1,
                open_issue_count: 10,
                default_branch: "main".into(),
            });
            let personas: Vec<PersonaId> = (1..=5).map(|i| persona(i).id).collect();
            for i in 1..=5 {
                data.add_persona(&repo, persona(i))?;
            }
            let issues: Vec<u64> = (1..=10).collect();
            for &n in &issues {
                data.upsert_issue(&repo, issue(n))?;
                data.put_mapping(&repo, mapping(n, &personas[(n as usize - 1) % 5]))?;
            }
            Ok(Seeded {
                repo,
                personas,
                issues,
            })
        })
        .unwrap()
}
