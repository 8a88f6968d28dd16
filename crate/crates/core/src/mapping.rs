//! Issue-to-persona mapping.
//!
//! With a completion provider, each issue costs one issue-mapping call. In
//! offline mode the evidence rubric is scored from text-overlap heuristics
//! instead. Manual overrides and re-mapping rules live here too; they are
//! pure functions over [`IssuePersonaMapping`] values.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::{
    AnalysisNotes, Association, ExperienceLevel, ImpactLevel, IssuePersonaMapping, IssueRecord,
    IssueType, Origin, Persona, PersonaId, TechnicalLevel,
};
use crate::parse::parse_mapping;
use crate::prompts::{context, render_prompt, Stage};
use crate::provider::LlmClient;

/// Points below which the offline scorer does not match a persona.
pub const OFFLINE_MATCH_FLOOR: u8 = 40;

/// Issues mapped concurrently by [`map_many`].
pub const DEFAULT_MAPPING_CONCURRENCY: usize = 4;

pub const MANUAL_RATIONALE: &str = "manually associated";

/// One rubric component and its weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    GoalMentionsFeature,
    PainPointDescribes,
    PrimaryWorkflow,
    BlocksGoal,
    TechLevelMatch,
    ContextExplainsUrgency,
    ToneAlignment,
    EasyWorkaround,
    TechnicalMismatch,
    RarelyUsesFeature,
}

impl Evidence {
    pub const ALL: [Evidence; 10] = [
        Evidence::GoalMentionsFeature,
        Evidence::PainPointDescribes,
        Evidence::PrimaryWorkflow,
        Evidence::BlocksGoal,
        Evidence::TechLevelMatch,
        Evidence::ContextExplainsUrgency,
        Evidence::ToneAlignment,
        Evidence::EasyWorkaround,
        Evidence::TechnicalMismatch,
        Evidence::RarelyUsesFeature,
    ];

    pub fn weight(self) -> i32 {
        match self {
            Evidence::GoalMentionsFeature | Evidence::PainPointDescribes => 20,
            Evidence::PrimaryWorkflow | Evidence::BlocksGoal => 15,
            Evidence::TechLevelMatch
            | Evidence::ContextExplainsUrgency
            | Evidence::ToneAlignment => 10,
            Evidence::EasyWorkaround => -20,
            Evidence::TechnicalMismatch => -30,
            Evidence::RarelyUsesFeature => -40,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Evidence::GoalMentionsFeature => "goal_mentions_feature",
            Evidence::PainPointDescribes => "pain_point_describes",
            Evidence::PrimaryWorkflow => "primary_workflow",
            Evidence::BlocksGoal => "blocks_goal",
            Evidence::TechLevelMatch => "tech_level_match",
            Evidence::ContextExplainsUrgency => "context_explains_urgency",
            Evidence::ToneAlignment => "tone_alignment",
            Evidence::EasyWorkaround => "easy_workaround",
            Evidence::TechnicalMismatch => "technical_mismatch",
            Evidence::RarelyUsesFeature => "rarely_uses_feature",
        }
    }
}

/// Which rubric components hold for an (issue, persona) pair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvidenceFlags(BTreeSet<Evidence>);

impl EvidenceFlags {
    pub fn new(flags: impl IntoIterator<Item = Evidence>) -> Self {
        EvidenceFlags(flags.into_iter().collect())
    }

    /// Bit `i` of `bits` sets `Evidence::ALL[i]`.
    pub fn from_bits(bits: u16) -> Self {
        Self::new(
            Evidence::ALL
                .into_iter()
                .enumerate()
                .filter(|(i, _)| bits & (1 << i) != 0)
                .map(|(_, e)| e),
        )
    }

    pub fn set(&mut self, e: Evidence, on: bool) {
        if on {
            self.0.insert(e);
        } else {
            self.0.remove(&e);
        }
    }

    pub fn contains(&self, e: Evidence) -> bool {
        self.0.contains(&e)
    }

    pub fn iter(&self) -> impl Iterator<Item = Evidence> + '_ {
        self.0.iter().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricScore {
    /// Clamped to 0..=100.
    pub points: u8,
    /// Weight of every triggered component, by component name.
    pub breakdown: BTreeMap<String, i32>,
}

pub fn rubric_score(flags: &EvidenceFlags) -> RubricScore {
    let breakdown: BTreeMap<String, i32> = flags
        .iter()
        .map(|e| (e.as_str().to_string(), e.weight()))
        .collect();
    let sum: i32 = flags.iter().map(Evidence::weight).sum();
    RubricScore {
        points: sum.clamp(0, 100) as u8,
        breakdown,
    }
}

pub fn rubric_to_confidence(points: u8) -> f64 {
    f64::from(points.min(100)) / 100.0
}

// ---------------------------------------------------------------------------
// text heuristics

const STOPWORDS: &[&str] = &[
    "the", "and", "for", "with", "that", "this", "from", "into", "when", "what", "have", "has",
    "are", "was", "were", "not", "but", "can", "could", "would", "should", "their", "them", "they",
    "there", "then", "than", "also", "more", "less", "very", "just", "like", "want", "need",
    "needs", "make", "makes", "using", "use", "used", "uses", "user", "users", "your", "you",
    "our", "out", "all", "any", "its", "it's", "about", "other", "some", "such", "only", "over",
    "under", "without", "within", "which", "while", "will", "being", "been", "does", "doesn",
    "don", "how", "why", "who", "able", "get", "gets", "one", "two", "new", "time", "way", "work",
    "works", "working",
];

const URGENCY_MARKERS: &[&str] = &[
    "urgent",
    "blocker",
    "blocking",
    "crash",
    "crashes",
    "data loss",
    "cannot",
    "can't",
    "unable",
    "broken",
    "production",
    "deadline",
    "asap",
    "critical",
    "fails",
];

const TECH_MARKERS: &[&str] = &[
    "stack trace",
    "traceback",
    "segfault",
    "exception",
    "api",
    "cli",
    "docker",
    "config",
    "compile",
    "build",
    "regex",
    "endpoint",
    "sql",
    "kernel",
    "memory",
    "thread",
    "ghostscript",
    "postscript",
    "command line",
    "flag",
    "version",
    "error:",
    "```",
];

/// Lowercased content words, with a trailing plural `s` removed.
pub fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= 3)
        .map(|w| w.to_lowercase())
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .map(|w| match w.strip_suffix('s') {
            Some(stem) if stem.chars().count() >= 3 && !stem.ends_with('s') => stem.to_string(),
            _ => w,
        })
        .collect()
}

fn overlap(a: &BTreeSet<String>, b: &BTreeSet<String>) -> usize {
    a.intersection(b).count()
}

/// Phrases from `phrases` whose content words appear in the issue: at least
/// two shared words, or every word of a one- or two-word phrase.
fn matching_phrases(phrases: &[String], issue: &BTreeSet<String>) -> Vec<String> {
    phrases
        .iter()
        .filter(|p| {
            let t = tokens(p);
            let shared = overlap(&t, issue);
            shared >= 2 || (shared >= 1 && shared == t.len())
        })
        .cloned()
        .collect()
}

pub fn issue_text(issue: &IssueRecord) -> String {
    format!(
        "Title: {}\nBody: {}\nLabels: {}",
        issue.title,
        issue.body,
        issue.labels.join(", ")
    )
}

fn markers<'a>(text: &str, list: &[&'a str]) -> Vec<&'a str> {
    let lower = text.to_lowercase();
    list.iter()
        .copied()
        .filter(|m| {
            if m.chars().all(|c| c.is_alphanumeric()) {
                lower.split(|c: char| !c.is_alphanumeric()).any(|w| w == *m)
            } else {
                lower.contains(m)
            }
        })
        .collect()
}

pub fn estimate_technical_level(issue: &IssueRecord) -> TechnicalLevel {
    match markers(&issue_text(issue), TECH_MARKERS).len() {
        0 => TechnicalLevel::Beginner,
        1 | 2 => TechnicalLevel::Intermediate,
        _ => TechnicalLevel::Advanced,
    }
}

pub fn estimate_issue_type(issue: &IssueRecord) -> IssueType {
    let labels: Vec<String> = issue.labels.iter().map(|l| l.to_lowercase()).collect();
    let has = |needle: &str| labels.iter().any(|l| l.contains(needle));
    if has("bug") {
        IssueType::Bug
    } else if has("enhancement") || has("improvement") {
        IssueType::Enhancement
    } else if has("feature") {
        IssueType::Feature
    } else {
        let t = issue_text(issue).to_lowercase();
        if [
            "error",
            "crash",
            "fail",
            "broken",
            "bug",
            "wrong",
            "missing",
            "not supported",
        ]
        .iter()
        .any(|w| t.contains(w))
        {
            IssueType::Bug
        } else {
            IssueType::Feature
        }
    }
}

fn level_rank(l: TechnicalLevel) -> i32 {
    l as i32
}

fn persona_rank(e: ExperienceLevel) -> i32 {
    // expert sits above the issue lattice's top level
    e.rank() as i32
}

/// Evidence derived from text overlap and the technical-level lattice.
pub fn evidence_flags(
    issue: &IssueRecord,
    persona: &Persona,
) -> (EvidenceFlags, Vec<String>, Vec<String>) {
    let p = &persona.profile;
    let issue_tokens = tokens(&format!(
        "{} {} {}",
        issue.title,
        issue.body,
        issue.labels.join(" ")
    ));
    let goals = matching_phrases(&p.goals, &issue_tokens);
    let pains = matching_phrases(&p.pain_points, &issue_tokens);
    let workflow = tokens(&format!(
        "{} {} {}",
        p.occupation,
        p.tagline,
        p.technical_skills.join(" ")
    ));
    let profile_tokens = tokens(&format!(
        "{} {} {} {} {} {} {}",
        p.occupation,
        p.tagline,
        p.background,
        p.quote,
        p.goals.join(" "),
        p.pain_points.join(" "),
        p.technical_skills.join(" ")
    ));
    let text = issue_text(issue);
    let urgency = markers(&text, URGENCY_MARKERS);
    let issue_level = level_rank(estimate_technical_level(issue));
    let rank = persona_rank(p.experience_level);
    let pain_tokens = tokens(&p.pain_points.join(" "));

    let mut f = EvidenceFlags::default();
    f.set(Evidence::GoalMentionsFeature, !goals.is_empty());
    f.set(Evidence::PainPointDescribes, !pains.is_empty());
    f.set(
        Evidence::PrimaryWorkflow,
        overlap(&workflow, &issue_tokens) >= 1 && (!goals.is_empty() || !pains.is_empty()),
    );
    f.set(
        Evidence::BlocksGoal,
        !goals.is_empty() && estimate_issue_type(issue) == IssueType::Bug,
    );
    f.set(Evidence::TechLevelMatch, rank >= issue_level);
    f.set(
        Evidence::ContextExplainsUrgency,
        !urgency.is_empty() && overlap(&pain_tokens, &issue_tokens) >= 1,
    );
    f.set(
        Evidence::ToneAlignment,
        (rank.min(2) - issue_level).abs() <= 1,
    );
    f.set(
        Evidence::EasyWorkaround,
        text.to_lowercase().contains("workaround") && rank >= 2,
    );
    f.set(Evidence::TechnicalMismatch, issue_level - rank >= 2);
    f.set(
        Evidence::RarelyUsesFeature,
        overlap(&profile_tokens, &issue_tokens) == 0,
    );
    (f, goals, pains)
}

/// Maps an issue without a provider: rubric points from heuristic evidence,
/// a match at 40 points or more.
pub fn offline_mapping(issue: &IssueRecord, personas: &[Persona]) -> IssuePersonaMapping {
    let mut associations = Vec::new();
    for p in personas {
        let (flags, goals, pains) = evidence_flags(issue, p);
        let score = rubric_score(&flags);
        if score.points < OFFLINE_MATCH_FLOOR {
            continue;
        }
        let relevance = rubric_to_confidence(score.points);
        let evidence: Vec<String> = score
            .breakdown
            .iter()
            .map(|(k, v)| format!("{k} {v:+}"))
            .collect();
        let quoted = goals
            .first()
            .map(|g| format!("goal \"{g}\""))
            .or_else(|| pains.first().map(|pp| format!("pain point \"{pp}\"")))
            .unwrap_or_else(|| format!("role \"{}\"", p.profile.occupation));
        associations.push(Association {
            persona_id: p.id.clone(),
            origin: Origin::AiSuggested,
            relevance_score: relevance,
            matched_goals: goals,
            matched_pain_points: pains,
            use_case_fit: p.profile.tagline.clone(),
            impact_level: impact_for(relevance),
            rationale: format!(
                "Offline rubric {} points ({}); matches {quoted}",
                score.points,
                evidence.join(", ")
            ),
            tombstoned: false,
        });
    }
    associations.sort_by(|a, b| b.relevance_score.total_cmp(&a.relevance_score));
    let primary = associations.first().map(|a| a.persona_id.clone());
    let confidence = associations
        .first()
        .map(|a| a.relevance_score)
        .unwrap_or(0.0);
    let text = issue_text(issue);
    IssuePersonaMapping {
        issue_number: issue.number,
        reasoning: if associations.is_empty() {
            "No persona reached the offline rubric threshold.".into()
        } else {
            format!(
                "{} persona(s) reached the offline rubric threshold.",
                associations.len()
            )
        },
        associations,
        primary_persona_id: primary,
        confidence,
        analysis_notes: Some(AnalysisNotes {
            issue_type: estimate_issue_type(issue),
            technical_level: estimate_technical_level(issue),
            urgency_indicators: markers(&text, URGENCY_MARKERS)
                .into_iter()
                .map(String::from)
                .collect(),
        }),
    }
}

fn impact_for(relevance: f64) -> ImpactLevel {
    if relevance >= 0.8 {
        ImpactLevel::High
    } else if relevance >= 0.6 {
        ImpactLevel::Medium
    } else {
        ImpactLevel::Low
    }
}

// ---------------------------------------------------------------------------
// provider-backed mapping

/// The persona list sent with an issue: content fields only, numbered from
/// 1 in the order given.
pub fn personas_json(personas: &[Persona]) -> String {
    let items: Vec<Value> = personas
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let f = &p.profile;
            json!({
                "id": i + 1,
                "name": f.name,
                "age": f.age,
                "occupation": f.occupation,
                "location": f.location,
                "quote": f.quote,
                "tagline": f.tagline,
                "background": f.background,
                "personality_traits": f.personality_traits,
                "goals": f.goals,
                "pain_points": f.pain_points,
                "technical_skills": f.technical_skills,
                "experience_level": f.experience_level,
            })
        })
        .collect();
    serde_json::to_string(&items).expect("persona list serializes")
}

/// Maps one issue onto `personas`. One provider call when a provider is
/// configured; otherwise the offline rubric.
pub fn map_issue(
    llm: &LlmClient,
    issue: &IssueRecord,
    personas: &[Persona],
) -> Result<IssuePersonaMapping> {
    if personas.is_empty() {
        return Err(Error::InvalidParams(
            "mapping needs at least one active persona".into(),
        ));
    }
    if !llm.has_text_provider() {
        return Ok(offline_mapping(issue, personas));
    }
    let bundle = render_prompt(
        Stage::IssueMapping,
        &context([
            ("issue", issue_text(issue)),
            ("personas", personas_json(personas)),
        ]),
    )?;
    let ids: Vec<PersonaId> = personas.iter().map(|p| p.id.clone()).collect();
    llm.complete_parsed(&bundle, |raw| {
        parse_mapping(raw)?.resolve(issue.number, &ids)
    })
}

/// Maps each issue independently with at most `concurrency` in flight.
/// Results come back in input order.
pub fn map_many(
    llm: &LlmClient,
    issues: &[IssueRecord],
    personas: &[Persona],
    concurrency: usize,
) -> Vec<(u64, Result<IssuePersonaMapping>)> {
    let slots: Vec<Mutex<Option<Result<IssuePersonaMapping>>>> =
        issues.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..concurrency.max(1).min(issues.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(issue) = issues.get(i) else { break };
                *slots[i].lock().unwrap() = Some(map_issue(llm, issue, personas));
            });
        }
    });
    issues
        .iter()
        .zip(slots)
        .map(|(issue, slot)| {
            let r = slot
                .into_inner()
                .unwrap()
                .unwrap_or_else(|| Err(Error::Provider("issue was not mapped".into())));
            (issue.number, r)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// overrides and re-mapping

/// Combines a fresh automatic mapping with what people already decided.
/// Manual associations stay, removals stay removed, and only the AI part is
/// replaced.
pub fn merge_remap(
    existing: Option<&IssuePersonaMapping>,
    fresh: IssuePersonaMapping,
) -> IssuePersonaMapping {
    let Some(existing) = existing else {
        return fresh;
    };
    let mut kept: Vec<Association> = existing
        .associations
        .iter()
        .filter(|a| a.origin == Origin::Manual || a.tombstoned)
        .cloned()
        .collect();
    let decided: BTreeSet<PersonaId> = kept.iter().map(|a| a.persona_id.clone()).collect();
    kept.extend(
        fresh
            .associations
            .into_iter()
            .filter(|a| !decided.contains(&a.persona_id)),
    );
    let mut out = IssuePersonaMapping {
        issue_number: existing.issue_number,
        associations: kept,
        primary_persona_id: fresh.primary_persona_id,
        confidence: fresh.confidence,
        reasoning: fresh.reasoning,
        analysis_notes: fresh.analysis_notes,
    };
    repair_primary(&mut out);
    out
}

/// Clears or replaces the primary persona when its association is no longer
/// live: the strongest live AI suggestion wins, then any live manual one.
pub fn repair_primary(m: &mut IssuePersonaMapping) {
    if let Some(p) = &m.primary_persona_id {
        if m.live().any(|a| &a.persona_id == p) {
            return;
        }
    }
    let best = |origin: Origin| {
        m.live()
            .filter(|a| a.origin == origin)
            .max_by(|a, b| a.relevance_score.total_cmp(&b.relevance_score))
            .map(|a| a.persona_id.clone())
    };
    m.primary_persona_id = best(Origin::AiSuggested).or_else(|| best(Origin::Manual));
}

/// Applies a manual add/remove request. `known` is the set of persona ids
/// that may be referenced (the active personas).
pub fn override_associations(
    current: Option<&IssuePersonaMapping>,
    issue_number: u64,
    add: &[PersonaId],
    remove: &[PersonaId],
    known: &[PersonaId],
) -> Result<IssuePersonaMapping> {
    for id in add.iter().chain(remove) {
        if !known.contains(id) {
            return Err(Error::UnknownPersona(id.clone()));
        }
    }
    if let Some(id) = add.iter().find(|id| remove.contains(id)) {
        return Err(Error::ConflictingRequest(format!(
            "persona {id} is both added and removed"
        )));
    }
    let mut m = current
        .cloned()
        .unwrap_or_else(|| IssuePersonaMapping::empty(issue_number));
    for id in remove {
        let live = m
            .associations
            .iter_mut()
            .find(|a| !a.tombstoned && &a.persona_id == id)
            .ok_or_else(|| {
                Error::ConflictingRequest(format!(
                    "persona {id} is not associated with issue #{issue_number}"
                ))
            })?;
        live.tombstoned = true;
    }
    for id in add {
        match m
            .associations
            .iter_mut()
            .find(|a| !a.tombstoned && &a.persona_id == id)
        {
            Some(a) if a.origin == Origin::Manual => {}
            Some(a) => {
                // A person confirming an AI suggestion takes ownership of it;
                // the suggestion is kept as a tombstone for the audit trail.
                a.tombstoned = true;
                m.associations.push(manual_association(id));
            }
            None => m.associations.push(manual_association(id)),
        }
    }
    repair_primary(&mut m);
    Ok(m)
}

fn manual_association(id: &PersonaId) -> Association {
    Association {
        persona_id: id.clone(),
        origin: Origin::Manual,
        relevance_score: 1.0,
        matched_goals: Vec::new(),
        matched_pain_points: Vec::new(),
        use_case_fit: String::new(),
        impact_level: ImpactLevel::High,
        rationale: MANUAL_RATIONALE.into(),
        tombstoned: false,
    }
}

/// Hides every association with a persona that is being archived.
pub fn tombstone_persona(m: &mut IssuePersonaMapping, id: &PersonaId) -> bool {
    let mut changed = false;
    for a in m
        .associations
        .iter_mut()
        .filter(|a| &a.persona_id == id && !a.tombstoned)
    {
        a.tombstoned = true;
        changed = true;
    }
    if changed {
        repair_primary(m);
    }
    changed
}
