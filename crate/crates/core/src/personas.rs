//! Persona operations: the generation chain, merge, edit, custom creation,
//! regeneration and avatar assignment.
//!
//! Functions here compute new persona values; persisting them (and
//! archiving merge sources or regenerated personas) is the caller's job.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use chrono::{DateTime, Duration as ChronoDuration, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    validate_persona, AvatarKind, AvatarRef, DomainAnalysis, ExperienceLevel, Persona, PersonaId,
    PersonaProfile, Provenance, ResourceCorpus, UserInsights,
};
use crate::parse::{parse_domain_analysis, parse_merged, parse_personas, parse_user_insights};
use crate::prompts::{context, render_prompt, PromptContext, Stage, HEADSHOT_TEMPLATES};
use crate::provider::LlmClient;

/// Personas one generation run may ask for.
pub const PERSONA_COUNT: RangeInclusive<usize> = 1..=10;

pub const DICEBEAR_BASE: &str = "https://api.dicebear.com/9.x";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvatarMode {
    GeneratedImage,
    ParameterizedUrl,
}

/// Milestones inside the analysis and generation stages, reported so the
/// job runner can advance its progress bar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainStep {
    InsightsDone,
    DomainDone,
    PersonasDone,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub insights: UserInsights,
    pub domain: DomainAnalysis,
    pub personas: Vec<Persona>,
    pub warnings: Vec<String>,
}

pub fn check_count(n: usize) -> Result<()> {
    if PERSONA_COUNT.contains(&n) {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "persona count {n} outside {}-{}",
            PERSONA_COUNT.start(),
            PERSONA_COUNT.end()
        )))
    }
}

/// Runs user insights, domain analysis and persona generation in order and
/// returns exactly `n` AI personas with avatars.
pub fn generate_personas(
    llm: &LlmClient,
    corpus: &ResourceCorpus,
    n: usize,
    avatars: AvatarMode,
    on_step: &mut dyn FnMut(ChainStep),
) -> Result<Generated> {
    check_count(n)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let rendered = corpus.render();
    let insights = llm.complete_parsed(
        &render_prompt(
            Stage::UserInsights,
            &context([
                ("owner_repo", corpus.repo.full_name()),
                ("corpus", rendered.clone()),
            ]),
        )?,
        parse_user_insights,
    )?;
    on_step(ChainStep::InsightsDone);
    let domain = llm.complete_parsed(
        &render_prompt(
            Stage::DomainAnalysis,
            &context([("repository_content", domain_input(&rendered, &insights))]),
        )?,
        parse_domain_analysis,
    )?;
    on_step(ChainStep::DomainDone);
    let (personas, warnings) = personas_from_domain(llm, &domain, n, &[], avatars)?;
    on_step(ChainStep::PersonasDone);
    Ok(Generated {
        insights,
        domain,
        personas,
        warnings,
    })
}

/// The domain-analysis input: the corpus followed by the user insights the
/// previous stage extracted.
pub fn domain_input(rendered_corpus: &str, insights: &UserInsights) -> String {
    format!(
        "{rendered_corpus}\n\n### User insights\nUser types: {}\nPrimary use cases: {}\nPain points: {}",
        insights.user_types.join("; "),
        insights.primary_use_cases.join("; "),
        insights.pain_points.join("; "),
    )
}

/// One persona-generation call. `existing` personas are listed in the prompt
/// so the model produces distinct ones.
pub fn personas_from_domain(
    llm: &LlmClient,
    domain: &DomainAnalysis,
    n: usize,
    existing: &[Persona],
    avatars: AvatarMode,
) -> Result<(Vec<Persona>, Vec<String>)> {
    check_count(n)?;
    let mut ctx = context([
        ("n", n.to_string()),
        (
            "domain_analysis",
            serde_json::to_string(domain).expect("domain analysis serializes"),
        ),
    ]);
    if !existing.is_empty() {
        ctx.insert("existing_personas".into(), existing_block(existing));
    }
    let bundle = render_prompt(Stage::PersonaGeneration, &ctx)?;
    let profiles = llm.complete_parsed(&bundle, |raw| {
        let mut ps = parse_personas(raw)?;
        if ps.len() < n {
            return Err(Error::parse(
                Stage::PersonaGeneration,
                format!("expected {n} personas, got {}", ps.len()),
            ));
        }
        ps.truncate(n);
        Ok(ps)
    })?;
    let now = Utc::now();
    let mut warnings = Vec::new();
    let personas = profiles
        .into_iter()
        .map(|profile| {
            let (avatar, warning) = assign_avatar(llm, &profile, avatars);
            warnings.extend(warning);
            Persona {
                id: PersonaId::generate(),
                profile,
                provenance: Provenance::AiGenerated,
                edited: false,
                source_persona_ids: Vec::new(),
                avatar,
                created_at: now,
                updated_at: now,
            }
        })
        .collect();
    Ok((personas, warnings))
}

fn existing_block(existing: &[Persona]) -> String {
    existing
        .iter()
        .map(|p| format!("- {}: {}", p.profile.name, p.profile.tagline))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Personas a "regenerate all" replaces: unedited AI output.
pub fn replaceable(p: &Persona) -> bool {
    p.provenance == Provenance::AiGenerated && !p.edited
}

/// Replaces the replaceable personas in `active` with `n` fresh ones.
/// Returns the new personas and the ids to archive.
pub fn regenerate(
    llm: &LlmClient,
    domain: &DomainAnalysis,
    active: &[Persona],
    n: usize,
    avatars: AvatarMode,
) -> Result<(Vec<Persona>, Vec<PersonaId>, Vec<String>)> {
    let (replace, keep): (Vec<&Persona>, Vec<&Persona>) =
        active.iter().partition(|p| replaceable(p));
    let keep: Vec<Persona> = keep.into_iter().cloned().collect();
    let (fresh, warnings) = personas_from_domain(llm, domain, n, &keep, avatars)?;
    Ok((
        fresh,
        replace.into_iter().map(|p| p.id.clone()).collect(),
        warnings,
    ))
}

/// Text block describing the merge sources, one labelled field per line.
pub fn merge_descriptions(sources: &[&Persona]) -> String {
    sources
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let f = &p.profile;
            [
                format!("Persona {}:", i + 1),
                format!("name: {}", f.name),
                format!("age: {}", f.age),
                format!("occupation: {}", f.occupation),
                format!("location: {}", f.location),
                format!("quote: {}", f.quote),
                format!("tagline: {}", f.tagline),
                format!("background: {}", f.background),
                format!("personality traits: {}", f.personality_traits.join("; ")),
                format!("goals: {}", f.goals.join("; ")),
                format!("pain points: {}", f.pain_points.join("; ")),
                format!("technical skills: {}", f.technical_skills.join("; ")),
                format!("experience level: {}", f.experience_level.as_str()),
                format!("tags: {}", f.tags.join("; ")),
            ]
            .join("\n")
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Merges two or more active personas into a new one. Duplicate ids are
/// collapsed before counting.
pub fn merge_personas(
    llm: &LlmClient,
    active: &[Persona],
    ids: &[PersonaId],
    guidance: Option<&str>,
    avatars: AvatarMode,
) -> Result<(Persona, Vec<String>)> {
    let mut unique: Vec<PersonaId> = Vec::new();
    for id in ids {
        if !unique.contains(id) {
            unique.push(id.clone());
        }
    }
    let sources = unique
        .iter()
        .map(|id| {
            active
                .iter()
                .find(|p| &p.id == id)
                .ok_or_else(|| Error::UnknownPersona(id.clone()))
        })
        .collect::<Result<Vec<&Persona>>>()?;
    if sources.len() < 2 {
        return Err(Error::FewerThanTwo);
    }
    let mut ctx = context([
        ("n", sources.len().to_string()),
        ("personas", merge_descriptions(&sources)),
    ]);
    if let Some(g) = guidance {
        ctx.insert("guidance".into(), g.to_string());
    }
    let mut profile = llm.complete_parsed(&render_prompt(Stage::Merge, &ctx)?, parse_merged)?;
    profile.confidence_score = sources
        .iter()
        .map(|p| p.profile.confidence_score)
        .sum::<f64>()
        / sources.len() as f64;
    let (avatar, warning) = assign_avatar(llm, &profile, avatars);
    let now = Utc::now();
    Ok((
        Persona {
            id: PersonaId::generate(),
            profile,
            provenance: Provenance::Merged,
            edited: false,
            source_persona_ids: unique,
            avatar,
            created_at: now,
            updated_at: now,
        },
        warning.into_iter().collect(),
    ))
}

/// Fields a person may change. Anything else in a patch body is rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quote: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tagline: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub personality_traits: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goals: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pain_points: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub technical_skills: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experience_level: Option<ExperienceLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avatar: Option<AvatarRef>,
}

impl PersonaPatch {
    /// Parses a patch from JSON, mapping unknown or mistyped fields to
    /// [`Error::InvalidPatch`].
    pub fn from_json(v: serde_json::Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::InvalidPatch(e.to_string()))
    }

    pub fn is_empty(&self) -> bool {
        *self == PersonaPatch::default()
    }
}

/// Applies `patch`, marks the persona edited and re-validates it under the
/// manual rules.
pub fn edit_persona(p: &Persona, patch: &PersonaPatch) -> Result<Persona> {
    let mut out = p.clone();
    let f = &mut out.profile;
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = &patch.$field {
                f.$field = v.clone();
            }
        )*};
    }
    set!(
        name,
        age,
        occupation,
        location,
        quote,
        tagline,
        background,
        personality_traits,
        goals,
        pain_points,
        technical_skills,
        experience_level,
        confidence_score,
        tags
    );
    if let Some(a) = &patch.avatar {
        out.avatar = a.clone();
    }
    out.edited = true;
    out.updated_at = advance(p.updated_at);
    let violations = validate_persona(&out);
    if !violations.is_empty() {
        return Err(Error::InvalidPatch(join_violations(&violations)));
    }
    Ok(out)
}

/// A timestamp strictly later than `previous`, normally "now".
pub fn advance(previous: DateTime<Utc>) -> DateTime<Utc> {
    Utc::now().max(previous + ChronoDuration::microseconds(1))
}

fn join_violations(v: &[crate::model::Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Builds a manual persona. Its confidence is fixed at 1.0 and its avatar
/// is the deterministic URL.
pub fn create_custom_persona(mut profile: PersonaProfile) -> Result<Persona> {
    profile.confidence_score = 1.0;
    let now = Utc::now();
    let p = Persona {
        id: PersonaId::generate(),
        avatar: parameterized_avatar(&profile),
        profile,
        provenance: Provenance::Manual,
        edited: false,
        source_persona_ids: Vec::new(),
        created_at: now,
        updated_at: now,
    };
    let violations = validate_persona(&p);
    if !violations.is_empty() {
        return Err(Error::InvalidPersona(join_violations(&violations)));
    }
    Ok(p)
}

/// Gives a persona its avatar. Image mode makes one image call and falls
/// back to the URL avatar (with a warning) if that call fails or images are
/// disabled.
pub fn assign_avatar(
    llm: &LlmClient,
    p: &PersonaProfile,
    mode: AvatarMode,
) -> (AvatarRef, Option<String>) {
    if mode == AvatarMode::ParameterizedUrl {
        return (parameterized_avatar(p), None);
    }
    let outcome = render_prompt(Stage::Headshot, &headshot_context(p))
        .ok()
        .and_then(|bundle| llm.generate_image(&bundle));
    match outcome {
        Some(Ok(locator)) if !locator.trim().is_empty() => (
            AvatarRef {
                kind: AvatarKind::GeneratedImage,
                locator,
                seed_inputs: headshot_context(p).into_iter().collect(),
            },
            None,
        ),
        Some(Ok(_)) => (
            parameterized_avatar(p),
            Some(format!(
                "headshot for {} came back empty; using fallback avatar",
                p.name
            )),
        ),
        Some(Err(e)) => (
            parameterized_avatar(p),
            Some(format!(
                "headshot for {} failed ({e}); using fallback avatar",
                p.name
            )),
        ),
        None => (
            parameterized_avatar(p),
            Some(format!(
                "image generation disabled; using fallback avatar for {}",
                p.name
            )),
        ),
    }
}

/// Deterministic avatar URL built from the experience level and name.
pub fn parameterized_avatar(p: &PersonaProfile) -> AvatarRef {
    let style = match p.experience_level {
        ExperienceLevel::Beginner => "adventurer",
        ExperienceLevel::Intermediate => "avataaars",
        ExperienceLevel::Advanced => "personas",
        ExperienceLevel::Expert => "notionists",
    };
    let seed: String = url::form_urlencoded::byte_serialize(p.name.as_bytes()).collect();
    AvatarRef {
        kind: AvatarKind::ParameterizedUrl,
        locator: format!("{DICEBEAR_BASE}/{style}/svg?seed={seed}"),
        seed_inputs: BTreeMap::from([
            (
                "experience_level".to_string(),
                p.experience_level.as_str().to_string(),
            ),
            ("name".to_string(), p.name.clone()),
        ]),
    }
}

/// Headshot template (1-based) for an occupation: a stable hash of the
/// occupation text, modulo the number of templates.
pub fn headshot_template(occupation: &str) -> usize {
    let digest = Sha256::digest(occupation.as_bytes());
    let head = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
    (head % HEADSHOT_TEMPLATES.len() as u64) as usize + 1
}

/// Placeholder values for a persona's headshot prompt.
pub fn headshot_context(p: &PersonaProfile) -> PromptContext {
    let (expression, photography) = match p.experience_level {
        ExperienceLevel::Beginner => ("Curious", "Bright natural light"),
        ExperienceLevel::Intermediate => ("Focused", "Soft window light"),
        ExperienceLevel::Advanced => ("Confident", "Warm indoor light"),
        ExperienceLevel::Expert => ("Composed", "Even studio light"),
    };
    context([
        ("template", headshot_template(&p.occupation).to_string()),
        ("gender_hint", "a person".to_string()),
        ("age", p.age.to_string()),
        ("occupation", p.occupation.clone()),
        ("expression", expression.to_string()),
        ("clothing_style", "everyday work clothes".to_string()),
        (
            "setting",
            format!("A workplace typical for a {}", p.occupation),
        ),
        ("photography_style", photography.to_string()),
    ])
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use serde_json::json;

    use super::*;
    use crate::model::persona_tests::{sample_persona, sample_profile};
    use crate::provider::{CallKind, FailingImageProvider, MockProvider, StubImageProvider};

    #[test]
    fn persona_count_bounds() {
        assert!(check_count(0).is_err());
        assert!(check_count(1).is_ok());
        assert!(check_count(10).is_ok());
        assert!(check_count(11).is_err());
    }

    #[test]
    fn out_of_range_count_makes_no_provider_call() {
        let llm = LlmClient::new(Some(Arc::new(MockProvider::new())));
        let corpus = ResourceCorpus {
            repo: crate::model::RepositoryRef {
                host: "h".into(),
                owner: "o".into(),
                name: "n".into(),
                stars: 0,
                forks: 0,
                open_issue_count: 0,
                default_branch: "main".into(),
            },
            documents: vec![],
            total_chars: 0,
            truncated: false,
        };
        let err = generate_personas(&llm, &corpus, 11, AvatarMode::ParameterizedUrl, &mut |_| {})
            .unwrap_err();
        assert!(matches!(err, Error::InvalidParams(_)));
        assert!(llm.ledger().calls().is_empty());
    }

    #[test]
    fn parameterized_avatar_is_deterministic() {
        let p = sample_profile();
        let a = parameterized_avatar(&p);
        assert_eq!(a, parameterized_avatar(&p));
        assert_eq!(a.kind, AvatarKind::ParameterizedUrl);
        assert!(a.locator.starts_with("https://api.dicebear.com/9.x/"));
        assert!(a.locator.ends_with(&format!(
            "seed={}",
            url::form_urlencoded::byte_serialize(p.name.as_bytes()).collect::<String>()
        )));
    }

    #[test]
    fn failing_image_provider_falls_back() {
        let llm = LlmClient::offline().with_images(Arc::new(FailingImageProvider));
        let (a, warning) = assign_avatar(&llm, &sample_profile(), AvatarMode::GeneratedImage);
        assert_eq!(a.kind, AvatarKind::ParameterizedUrl);
        assert!(warning.is_some());
        assert_eq!(llm.ledger().count(CallKind::Image), 1);
    }

    #[test]
    fn image_mode_makes_one_call() {
        let llm = LlmClient::offline().with_images(Arc::new(StubImageProvider));
        let (a, warning) = assign_avatar(&llm, &sample_profile(), AvatarMode::GeneratedImage);
        assert_eq!(a.kind, AvatarKind::GeneratedImage);
        assert!(warning.is_none());
        assert_eq!(llm.ledger().count(CallKind::Image), 1);
        let (_, _) = assign_avatar(&llm, &sample_profile(), AvatarMode::ParameterizedUrl);
        assert_eq!(llm.ledger().count(CallKind::Image), 1);
    }

    #[test]
    fn headshot_template_is_stable_and_in_range() {
        for occ in [
            "Freelance Music Composer",
            "Music Teacher",
            "",
            "Systems Integrator",
        ] {
            let t = headshot_template(occ);
            assert!((1..=3).contains(&t));
            assert_eq!(t, headshot_template(occ));
        }
    }

    #[test]
    fn single_field_patch() {
        let p = sample_persona(Provenance::AiGenerated);
        let patch = PersonaPatch::from_json(json!({"location": "Berlin, Germany"})).unwrap();
        let q = edit_persona(&p, &patch).unwrap();
        assert_eq!(q.profile.location, "Berlin, Germany");
        assert!(q.edited);
        assert!(q.updated_at > p.updated_at);
        let mut back = q.clone();
        back.profile.location = p.profile.location.clone();
        back.edited = false;
        back.updated_at = p.updated_at;
        assert_eq!(back, p);
    }

    #[test]
    fn patch_rules() {
        let p = sample_persona(Provenance::AiGenerated);
        let empty_goals = PersonaPatch::from_json(json!({"goals": []})).unwrap();
        assert!(matches!(
            edit_persona(&p, &empty_goals),
            Err(Error::InvalidPatch(_))
        ));
        for forbidden in [
            json!({"id": "x"}),
            json!({"provenance": "manual"}),
            json!({"created_at": "2024-01-01T00:00:00Z"}),
            json!({"source_persona_ids": []}),
        ] {
            assert!(matches!(
                PersonaPatch::from_json(forbidden),
                Err(Error::InvalidPatch(_))
            ));
        }
    }

    #[test]
    fn validator_branches_on_provenance_and_edits() {
        // (provenance, edited, age, expect valid)
        let table = [
            (Provenance::AiGenerated, false, 19, false),
            (Provenance::AiGenerated, true, 19, true),
            (Provenance::AiGenerated, false, 25, true),
            (Provenance::AiGenerated, false, 66, false),
            (Provenance::Manual, false, 8, true),
            (Provenance::Manual, false, 0, false),
        ];
        for (prov, edited, age, ok) in table {
            let mut p = sample_persona(prov);
            p.edited = edited;
            p.profile.age = age;
            assert_eq!(
                validate_persona(&p).is_empty(),
                ok,
                "{prov:?} edited={edited} age={age}"
            );
        }
        let p = sample_persona(Provenance::AiGenerated);
        let q = edit_persona(
            &p,
            &PersonaPatch {
                age: Some(19),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(q.edited);
        assert_eq!(q.profile.age, 19);
    }

    #[test]
    fn custom_persona_rules() {
        let mut profile = sample_profile();
        profile.confidence_score = 0.3;
        let p = create_custom_persona(profile.clone()).unwrap();
        assert_eq!(p.provenance, Provenance::Manual);
        assert_eq!(p.profile.confidence_score, 1.0);
        let twin = create_custom_persona(profile.clone()).unwrap();
        assert_ne!(p.id, twin.id);
        profile.occupation = String::new();
        assert!(matches!(
            create_custom_persona(profile),
            Err(Error::InvalidPersona(_))
        ));
    }

    #[test]
    fn merge_checks_ids_before_calling() {
        let llm = LlmClient::new(Some(Arc::new(MockProvider::new())));
        let a = sample_persona(Provenance::AiGenerated);
        let active = vec![a.clone()];
        assert!(matches!(
            merge_personas(
                &llm,
                &active,
                &[a.id.clone(), a.id.clone()],
                None,
                AvatarMode::ParameterizedUrl
            ),
            Err(Error::FewerThanTwo)
        ));
        assert!(matches!(
            merge_personas(
                &llm,
                &active,
                &[a.id.clone(), PersonaId::from("ghost")],
                None,
                AvatarMode::ParameterizedUrl
            ),
            Err(Error::UnknownPersona(_))
        ));
        assert!(llm.ledger().calls().is_empty());
    }
}
