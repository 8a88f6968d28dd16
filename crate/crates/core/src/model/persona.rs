use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Age bounds the generation prompt asks for. Only unedited AI output is
/// held to them.
pub const AI_AGE_RANGE: RangeInclusive<u32> = 25..=65;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PersonaId(pub String);

impl PersonaId {
    pub fn generate() -> Self {
        PersonaId(uuid::Uuid::new_v4().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PersonaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PersonaId {
    fn from(s: &str) -> Self {
        PersonaId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperienceLevel {
    Beginner,
    Intermediate,
    Advanced,
    Expert,
}

impl ExperienceLevel {
    pub const ALL: [ExperienceLevel; 4] = [
        ExperienceLevel::Beginner,
        ExperienceLevel::Intermediate,
        ExperienceLevel::Advanced,
        ExperienceLevel::Expert,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperienceLevel::Beginner => "beginner",
            ExperienceLevel::Intermediate => "intermediate",
            ExperienceLevel::Advanced => "advanced",
            ExperienceLevel::Expert => "expert",
        }
    }

    /// Position in the beginner < intermediate < advanced < expert lattice.
    pub fn rank(self) -> u8 {
        self as u8
    }
}

impl std::str::FromStr for ExperienceLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ExperienceLevel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown experience level `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    AiGenerated,
    Manual,
    Merged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvatarKind {
    GeneratedImage,
    ParameterizedUrl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvatarRef {
    pub kind: AvatarKind,
    pub locator: String,
    #[serde(default)]
    pub seed_inputs: BTreeMap<String, String>,
}

/// The content of a persona as the generation prompt describes it. This is
/// the part a model produces and a person edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub name: String,
    pub age: u32,
    pub occupation: String,
    pub location: String,
    pub quote: String,
    pub tagline: String,
    pub background: String,
    pub personality_traits: Vec<String>,
    pub goals: Vec<String>,
    pub pain_points: Vec<String>,
    pub technical_skills: Vec<String>,
    pub experience_level: ExperienceLevel,
    pub confidence_score: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub id: PersonaId,
    #[serde(flatten)]
    pub profile: PersonaProfile,
    pub provenance: Provenance,
    pub edited: bool,
    #[serde(default)]
    pub source_persona_ids: Vec<PersonaId>,
    pub avatar: AvatarRef,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl Persona {
    /// Unedited AI output is held to the generation prompt's constraints;
    /// anything a person touched follows the relaxed manual rules.
    pub fn uses_ai_rules(&self) -> bool {
        self.provenance == Provenance::AiGenerated && !self.edited
    }
}

/// One broken persona invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Violation {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Checks every persona invariant and reports all violations. An empty list
/// means the persona is valid.
pub fn validate_persona(p: &Persona) -> Vec<Violation> {
    let mut out = validate_profile(&p.profile, p.uses_ai_rules());
    match p.provenance {
        Provenance::Merged if p.source_persona_ids.len() < 2 => out.push(Violation::new(
            "source_persona_ids",
            "merged personas need at least two sources",
        )),
        Provenance::AiGenerated | Provenance::Manual if !p.source_persona_ids.is_empty() => out
            .push(Violation::new(
                "source_persona_ids",
                "only merged personas carry source ids",
            )),
        _ => {}
    }
    if p.avatar.locator.trim().is_empty() {
        out.push(Violation::new("avatar", "locator is empty"));
    }
    out
}

pub(crate) fn validate_profile(p: &PersonaProfile, ai_rules: bool) -> Vec<Violation> {
    let mut out = Vec::new();
    for (field, value) in [("name", &p.name), ("occupation", &p.occupation)] {
        if value.trim().is_empty() {
            out.push(Violation::new(field, "must not be empty"));
        }
    }
    if ai_rules {
        if !AI_AGE_RANGE.contains(&p.age) {
            out.push(Violation::new(
                "age",
                format!(
                    "age out of [{},{}]",
                    AI_AGE_RANGE.start(),
                    AI_AGE_RANGE.end()
                ),
            ));
        }
    } else if p.age == 0 {
        out.push(Violation::new("age", "age must be positive"));
    }
    if p.goals.iter().all(|g| g.trim().is_empty()) {
        out.push(Violation::new("goals", "must not be empty"));
    }
    if p.pain_points.iter().all(|g| g.trim().is_empty()) {
        out.push(Violation::new("pain_points", "must not be empty"));
    }
    if !(0.0..=1.0).contains(&p.confidence_score) {
        out.push(Violation::new(
            "confidence_score",
            format!("{} outside [0, 1]", p.confidence_score),
        ));
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn sample_profile() -> PersonaProfile {
        PersonaProfile {
            name: "Yuki Tanaka".into(),
            age: 34,
            occupation: "Indie game developer".into(),
            location: "Osaka, Japan".into(),
            quote: "I just want my sketches to feel alive.".into(),
            tagline: "Sketches level layouts before coding them".into(),
            background: "Runs a two-person studio.".into(),
            personality_traits: vec!["Visual thinker".into()],
            goals: vec!["a".into(), "b".into(), "c".into()],
            pain_points: vec!["x".into(), "y".into(), "z".into()],
            technical_skills: vec!["Unity".into()],
            experience_level: ExperienceLevel::Intermediate,
            confidence_score: 0.8,
            tags: vec![],
        }
    }

    pub fn sample_persona(provenance: Provenance) -> Persona {
        let now = Utc::now();
        Persona {
            id: PersonaId::generate(),
            profile: sample_profile(),
            provenance,
            edited: false,
            source_persona_ids: vec![],
            avatar: AvatarRef {
                kind: AvatarKind::ParameterizedUrl,
                locator: "https://example.test/a.svg".into(),
                seed_inputs: BTreeMap::new(),
            },
            created_at: now,
            updated_at: now,
        }
    }

    #[test]
    fn well_formed_generated_persona_is_ok() {
        assert!(validate_persona(&sample_persona(Provenance::AiGenerated)).is_empty());
    }

    #[test]
    fn ai_age_below_range() {
        let mut p = sample_persona(Provenance::AiGenerated);
        p.profile.age = 24;
        let v = validate_persona(&p);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "age out of [25,65]");
    }

    #[test]
    fn reports_every_violation() {
        let mut p = sample_persona(Provenance::AiGenerated);
        p.profile.goals.clear();
        p.profile.confidence_score = 1.3;
        let v = validate_persona(&p);
        assert_eq!(v.len(), 2, "{v:?}");
        assert!(v.iter().any(|x| x.field == "goals"));
        assert!(v.iter().any(|x| x.field == "confidence_score"));
    }

    #[test]
    fn age_rule_branches_on_provenance_and_edit() {
        // (provenance, edited, age, ok)
        let table = [
            (Provenance::AiGenerated, false, 19, false),
            (Provenance::AiGenerated, true, 19, true),
            (Provenance::Manual, false, 9, true),
            (Provenance::Manual, false, 0, false),
            (Provenance::AiGenerated, false, 65, true),
            (Provenance::AiGenerated, false, 66, false),
        ];
        for (prov, edited, age, ok) in table {
            let mut p = sample_persona(prov);
            p.edited = edited;
            p.profile.age = age;
            assert_eq!(
                validate_persona(&p).is_empty(),
                ok,
                "{prov:?} {edited} {age}"
            );
        }
    }

    #[test]
    fn merged_needs_two_sources() {
        let mut p = sample_persona(Provenance::Merged);
        p.source_persona_ids = vec![PersonaId::from("a")];
        assert_eq!(validate_persona(&p).len(), 1);
        p.source_persona_ids.push(PersonaId::from("b"));
        assert!(validate_persona(&p).is_empty());
        let mut m = sample_persona(Provenance::Manual);
        m.source_persona_ids = vec![PersonaId::from("a"), PersonaId::from("b")];
        assert_eq!(validate_persona(&m).len(), 1);
    }

    #[test]
    fn round_trips_through_json() {
        let p = sample_persona(Provenance::AiGenerated);
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"pain_points\""));
        assert!(json.contains("\"experience_level\":\"intermediate\""));
        assert!(json.contains("\"provenance\":\"ai_generated\""));
        let back: Persona = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
