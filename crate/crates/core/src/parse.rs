//! Structured-output parsing for every text stage.
//!
//! Model output is rarely bare JSON. [`extract_json`] tolerates surrounding
//! prose and code fences; the per-stage parsers then validate the value and
//! name the first violation they find. Unknown fields are ignored.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{
    validate_persona, AnalysisNotes, Association, DomainAnalysis, ExperienceLevel, ImpactLevel,
    IssuePersonaMapping, IssueType, KeyFeature, Origin, PersonaId, PersonaProfile, TechnicalLevel,
    UserCharacteristic, UserInsights,
};
use crate::prompts::Stage;

/// A link proposed by the link-discovery stage.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PlannedLink {
    /// Repo-relative path for internal links, absolute URL for external.
    pub locator: String,
    pub expected_content: String,
    pub user_relevance: String,
    pub priority: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LinkPlan {
    pub internal: Vec<PlannedLink>,
    pub external: Vec<PlannedLink>,
    pub reasoning: String,
}

/// A validated issue-mapping answer whose persona references are still the
/// 1-based positions used in the prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingDraft {
    pub matched: Vec<usize>,
    pub primary: Option<usize>,
    pub confidence: f64,
    pub reasoning: String,
    pub rationales: BTreeMap<usize, RationaleDraft>,
    pub analysis_notes: AnalysisNotes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RationaleDraft {
    pub relevance_score: f64,
    pub matched_goals: Vec<String>,
    pub matched_pain_points: Vec<String>,
    pub use_case_fit: String,
    pub impact_level: ImpactLevel,
    pub rationale: String,
}

impl MappingDraft {
    /// Resolves prompt positions against the persona list that was sent.
    pub fn resolve(self, issue_number: u64, personas: &[PersonaId]) -> Result<IssuePersonaMapping> {
        let id_at = |i: usize| {
            personas.get(i.wrapping_sub(1)).cloned().ok_or_else(|| {
                Error::parse(
                    Stage::IssueMapping,
                    format!("persona id {i} does not match any persona in the prompt"),
                )
            })
        };
        let mut associations = Vec::with_capacity(self.matched.len());
        for i in &self.matched {
            let r = &self.rationales[i];
            associations.push(Association {
                persona_id: id_at(*i)?,
                origin: Origin::AiSuggested,
                relevance_score: r.relevance_score,
                matched_goals: r.matched_goals.clone(),
                matched_pain_points: r.matched_pain_points.clone(),
                use_case_fit: r.use_case_fit.clone(),
                impact_level: r.impact_level,
                rationale: r.rationale.clone(),
                tombstoned: false,
            });
        }
        Ok(IssuePersonaMapping {
            issue_number,
            associations,
            primary_persona_id: self.primary.map(id_at).transpose()?,
            confidence: self.confidence,
            reasoning: self.reasoning,
            analysis_notes: Some(self.analysis_notes),
        })
    }
}

/// Typed result of [`parse_stage_output`].
#[derive(Debug, Clone, PartialEq)]
pub enum StageOutput {
    LinkPlan(LinkPlan),
    UserInsights(UserInsights),
    DomainAnalysis(DomainAnalysis),
    Personas(Vec<PersonaProfile>),
    Merged(PersonaProfile),
    Mapping(MappingDraft),
}

pub fn parse_stage_output(stage: Stage, raw: &str) -> Result<StageOutput> {
    Ok(match stage {
        Stage::LinkDiscovery => StageOutput::LinkPlan(parse_link_plan(raw)?),
        Stage::UserInsights => StageOutput::UserInsights(parse_user_insights(raw)?),
        Stage::DomainAnalysis => StageOutput::DomainAnalysis(parse_domain_analysis(raw)?),
        Stage::PersonaGeneration => StageOutput::Personas(parse_personas(raw)?),
        Stage::Merge => StageOutput::Merged(parse_merged(raw)?),
        Stage::IssueMapping => StageOutput::Mapping(parse_mapping(raw)?),
        Stage::Headshot => {
            return Err(Error::parse(stage, "headshot output is an image, not text"))
        }
    })
}

// ---------------------------------------------------------------------------
// extraction

/// Finds the JSON object in `raw`. Fenced ```json blocks win; otherwise the
/// first position where a complete object parses is used.
pub fn extract_json(raw: &str) -> Option<Value> {
    let trimmed = raw.trim();
    if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(trimmed) {
        return Some(v);
    }
    for block in fenced_blocks(raw) {
        if let Some(v) = first_object(block) {
            return Some(v);
        }
    }
    first_object(raw)
}

fn fenced_blocks(raw: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let info = &after[..body_start];
        let body_start =
            if info.trim().is_empty() || info.trim().chars().all(|c| c.is_ascii_alphanumeric()) {
                body_start
            } else {
                // fence opened inline, e.g. "```json {...}```"
                after.find(['{', '[']).unwrap_or(0)
            };
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                out.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    out
}

fn first_object(s: &str) -> Option<Value> {
    for (i, _) in s.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&s[i..]).into_iter::<Value>();
        if let Some(Ok(v @ Value::Object(_))) = stream.next() {
            return Some(v);
        }
    }
    None
}

fn object(stage: Stage, raw: &str) -> Result<Map<String, Value>> {
    if raw.trim().is_empty() {
        return Err(Error::parse(stage, "empty response"));
    }
    match extract_json(raw) {
        Some(Value::Object(m)) => Ok(m),
        _ => Err(Error::parse(stage, "no JSON object found")),
    }
}

// ---------------------------------------------------------------------------
// field helpers

struct Fields<'a> {
    stage: Stage,
    path: String,
    map: &'a Map<String, Value>,
}

impl<'a> Fields<'a> {
    fn new(stage: Stage, path: impl Into<String>, map: &'a Map<String, Value>) -> Self {
        Fields {
            stage,
            path: path.into(),
            map,
        }
    }

    fn err(&self, field: &str, msg: &str) -> Error {
        let at = if self.path.is_empty() {
            field.to_string()
        } else {
            format!("{}.{field}", self.path)
        };
        Error::parse(self.stage, format!("`{at}` {msg}"))
    }

    fn get(&self, field: &str) -> Result<&'a Value> {
        match self.map.get(field) {
            Some(Value::Null) | None => Err(self.err(field, "is missing")),
            Some(v) => Ok(v),
        }
    }

    fn string(&self, field: &str) -> Result<String> {
        match self.get(field)? {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err(self.err(field, "must be a string")),
        }
    }

    fn opt_string(&self, field: &str) -> Result<String> {
        match self.map.get(field) {
            None | Some(Value::Null) => Ok(String::new()),
            Some(_) => self.string(field),
        }
    }

    fn nonempty_string(&self, field: &str) -> Result<String> {
        let s = self.string(field)?;
        if s.trim().is_empty() {
            return Err(self.err(field, "must not be empty"));
        }
        Ok(s)
    }

    /// A list of strings. Objects inside the list are flattened to
    /// `key: value` text rather than rejected.
    fn strings(&self, field: &str) -> Result<Vec<String>> {
        match self.get(field)? {
            Value::Array(items) => Ok(items.iter().map(flatten_text).collect()),
            Value::String(s) => Ok(vec![s.clone()]),
            _ => Err(self.err(field, "must be a list of strings")),
        }
    }

    fn opt_strings(&self, field: &str) -> Result<Vec<String>> {
        match self.map.get(field) {
            None | Some(Value::Null) => Ok(Vec::new()),
            Some(_) => self.strings(field),
        }
    }

    fn unit(&self, field: &str) -> Result<f64> {
        let v = number(self.get(field)?).ok_or_else(|| self.err(field, "must be a number"))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(self.err(field, "must be within [0, 1]"));
        }
        Ok(v)
    }

    fn array(&self, field: &str) -> Result<&'a Vec<Value>> {
        match self.get(field)? {
            Value::Array(a) => Ok(a),
            _ => Err(self.err(field, "must be a list")),
        }
    }

    fn object(&self, field: &str) -> Result<&'a Map<String, Value>> {
        match self.get(field)? {
            Value::Object(m) => Ok(m),
            _ => Err(self.err(field, "must be an object")),
        }
    }

    fn enumerated<T: Copy>(&self, field: &str, options: &[(&str, T)]) -> Result<T> {
        let s = self.string(field)?;
        let wanted = s.trim().to_ascii_lowercase();
        options
            .iter()
            .find(|(name, _)| *name == wanted)
            .map(|(_, v)| *v)
            .ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.err(field, &format!("must be one of {}", names.join("|")))
            })
    }
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .filter(|f: &f64| f.is_finite())
}

fn flatten_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Object(m) => m
            .iter()
            .map(|(k, v)| format!("{k}: {}", flatten_text(v)))
            .collect::<Vec<_>>()
            .join("; "),
        Value::Array(a) => a.iter().map(flatten_text).collect::<Vec<_>>().join(", "),
        other => other.to_string(),
    }
}

fn index(v: &Value) -> Option<usize> {
    match v {
        Value::Number(n) => n.as_u64().map(|n| n as usize),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .filter(|i| *i >= 1)
}

// ---------------------------------------------------------------------------
// stages

pub fn parse_link_plan(raw: &str) -> Result<LinkPlan> {
    let stage = Stage::LinkDiscovery;
    let m = object(stage, raw)?;
    let f = Fields::new(stage, "", &m);
    let links = |field: &str, locator_key: &str| -> Result<Vec<PlannedLink>> {
        let mut out = Vec::new();
        for (i, item) in f.array(field)?.iter().enumerate() {
            let Value::Object(lm) = item else {
                return Err(f.err(&format!("{field}[{i}]"), "must be an object"));
            };
            let lf = Fields::new(stage, format!("{field}[{i}]"), lm);
            let priority = number(lf.get("priority")?)
                .filter(|p| p.fract() == 0.0 && (1.0..=5.0).contains(p))
                .ok_or_else(|| lf.err("priority", "must be an integer in 1-5"))?;
            out.push(PlannedLink {
                locator: lf.nonempty_string(locator_key)?,
                expected_content: lf.opt_string("expected_content")?,
                user_relevance: lf.opt_string("user_relevance")?,
                priority: priority as u8,
            });
        }
        Ok(out)
    };
    let internal = links("internal_links", "path")?;
    let external = links("external_links", "url")?;
    for (i, l) in external.iter().enumerate() {
        if url::Url::parse(&l.locator).map(|u| u.scheme().starts_with("http")) != Ok(true) {
            return Err(f.err(
                &format!("external_links[{i}].url"),
                "must be an absolute http(s) URL",
            ));
        }
    }
    Ok(LinkPlan {
        internal,
        external,
        reasoning: f.nonempty_string("reasoning")?,
    })
}

pub fn parse_user_insights(raw: &str) -> Result<UserInsights> {
    let stage = Stage::UserInsights;
    let m = object(stage, raw)?;
    let f = Fields::new(stage, "", &m);
    Ok(UserInsights {
        user_types: f.strings("user_types")?,
        primary_use_cases: f.strings("primary_use_cases")?,
        user_needs: f.strings("user_needs")?,
        pain_points: f.strings("pain_points")?,
        community_insights: flatten_text(f.get("community_insights")?),
        persona_recommendations: f.strings("persona_recommendations")?,
    })
}

pub fn parse_domain_analysis(raw: &str) -> Result<DomainAnalysis> {
    let stage = Stage::DomainAnalysis;
    let m = object(stage, raw)?;
    let f = Fields::new(stage, "", &m);
    let mut key_features = Vec::new();
    for (i, item) in f.array("key_features")?.iter().enumerate() {
        let Value::Object(km) = item else {
            return Err(f.err(&format!("key_features[{i}]"), "must be an object"));
        };
        let kf = Fields::new(stage, format!("key_features[{i}]"), km);
        key_features.push(KeyFeature {
            name: kf.nonempty_string("name")?,
            description: kf.opt_string("description")?,
        });
    }
    if key_features.is_empty() {
        return Err(f.err("key_features", "must not be empty"));
    }
    let mut user_characteristics = Vec::new();
    if let Some(Value::Array(items)) = m.get("user_characteristics") {
        for (i, item) in items.iter().enumerate() {
            let Value::Object(cm) = item else {
                return Err(f.err(&format!("user_characteristics[{i}]"), "must be an object"));
            };
            let cf = Fields::new(stage, format!("user_characteristics[{i}]"), cm);
            user_characteristics.push(UserCharacteristic {
                trait_name: cf.string("trait")?,
                context: cf.opt_string("context")?,
            });
        }
    }
    Ok(DomainAnalysis {
        domain_summary: f.nonempty_string("domain_summary")?,
        key_features,
        user_characteristics,
        additional_insights: f.opt_strings("additional_insights")?,
    })
}

const LEVELS: [(&str, ExperienceLevel); 4] = [
    ("beginner", ExperienceLevel::Beginner),
    ("intermediate", ExperienceLevel::Intermediate),
    ("advanced", ExperienceLevel::Advanced),
    ("expert", ExperienceLevel::Expert),
];

/// Reads one persona object. `confidence_required` is false for merge
/// output, whose schema has no confidence field.
fn profile(f: &Fields<'_>, confidence_required: bool) -> Result<PersonaProfile> {
    let age = number(f.get("age")?)
        .filter(|a| a.fract() == 0.0 && *a >= 0.0 && *a <= u32::MAX as f64)
        .ok_or_else(|| f.err("age", "must be a whole number"))? as u32;
    let confidence_score = if confidence_required || f.map.contains_key("confidence_score") {
        f.unit("confidence_score")?
    } else {
        0.0
    };
    Ok(PersonaProfile {
        name: f.nonempty_string("name")?,
        age,
        occupation: f.nonempty_string("occupation")?,
        location: f.opt_string("location")?,
        quote: f.opt_string("quote")?,
        tagline: f.opt_string("tagline")?,
        background: f.opt_string("background")?,
        personality_traits: f.opt_strings("personality_traits")?,
        goals: f.strings("goals")?,
        pain_points: f.strings("pain_points")?,
        technical_skills: f.opt_strings("technical_skills")?,
        experience_level: f.enumerated("experience_level", &LEVELS)?,
        confidence_score,
        tags: f.opt_strings("tags")?,
    })
}

fn check_profile(f: &Fields<'_>, p: &PersonaProfile, ai_rules: bool) -> Result<()> {
    let probe = crate::model::Persona {
        id: PersonaId::from("probe"),
        profile: p.clone(),
        provenance: if ai_rules {
            crate::model::Provenance::AiGenerated
        } else {
            crate::model::Provenance::Manual
        },
        edited: false,
        source_persona_ids: Vec::new(),
        avatar: crate::model::AvatarRef {
            kind: crate::model::AvatarKind::ParameterizedUrl,
            locator: "probe".into(),
            seed_inputs: Default::default(),
        },
        created_at: chrono::DateTime::UNIX_EPOCH,
        updated_at: chrono::DateTime::UNIX_EPOCH,
    };
    match validate_persona(&probe).first() {
        Some(v) => Err(f.err(&v.field, &v.message)),
        None => Ok(()),
    }
}

/// Parses the persona-generation answer. Every persona must satisfy the
/// generation rules (age 25 to 65, goals and pain points present).
pub fn parse_personas(raw: &str) -> Result<Vec<PersonaProfile>> {
    let stage = Stage::PersonaGeneration;
    let m = object(stage, raw)?;
    let f = Fields::new(stage, "", &m);
    let items = f.array("personas")?;
    if items.is_empty() {
        return Err(f.err("personas", "must not be empty"));
    }
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let Value::Object(pm) = item else {
            return Err(f.err(&format!("personas[{i}]"), "must be an object"));
        };
        let pf = Fields::new(stage, format!("personas[{i}]"), pm);
        let p = profile(&pf, true)?;
        check_profile(&pf, &p, true)?;
        out.push(p);
    }
    Ok(out)
}

/// Parses the merge answer. The confidence score is left at zero for the
/// caller to fill in.
pub fn parse_merged(raw: &str) -> Result<PersonaProfile> {
    let stage = Stage::Merge;
    let m = object(stage, raw)?;
    // Some models wrap the single persona as {"persona": {...}}.
    let m = match m.get("persona") {
        Some(Value::Object(inner)) if !m.contains_key("name") => inner.clone(),
        _ => m,
    };
    let f = Fields::new(stage, "", &m);
    let p = profile(&f, false)?;
    check_profile(&f, &p, false)?;
    Ok(p)
}

pub fn parse_mapping(raw: &str) -> Result<MappingDraft> {
    let stage = Stage::IssueMapping;
    let m = object(stage, raw)?;
    let f = Fields::new(stage, "", &m);
    let mut matched = Vec::new();
    for (i, v) in f.array("matched_persona_ids")?.iter().enumerate() {
        let id = index(v).ok_or_else(|| {
            f.err(
                &format!("matched_persona_ids[{i}]"),
                "must be a positive integer id",
            )
        })?;
        if !matched.contains(&id) {
            matched.push(id);
        }
    }
    let primary = match m.get("primary_persona_id") {
        None | Some(Value::Null) => None,
        Some(v) => Some(index(v).ok_or_else(|| {
            f.err(
                "primary_persona_id",
                "must be a positive integer id or null",
            )
        })?),
    };
    if let Some(p) = primary {
        if !matched.contains(&p) {
            return Err(f.err("primary_persona_id", "is not among matched_persona_ids"));
        }
    }
    let confidence = f.unit("confidence")?;
    let rationale_map = match m.get("persona_rationales") {
        None | Some(Value::Null) => Map::new(),
        Some(_) => f.object("persona_rationales")?.clone(),
    };
    let mut by_index: BTreeMap<usize, &Map<String, Value>> = BTreeMap::new();
    for (k, v) in &rationale_map {
        let (Some(i), Value::Object(rm)) = (k.trim().parse::<usize>().ok(), v) else {
            return Err(f.err(
                &format!("persona_rationales.{k}"),
                "must be an object keyed by persona id",
            ));
        };
        by_index.insert(i, rm);
    }
    let mut rationales = BTreeMap::new();
    for id in &matched {
        let rm = by_index.get(id).ok_or_else(|| {
            f.err(
                &format!("persona_rationales.{id}"),
                "is missing for a matched persona",
            )
        })?;
        let rf = Fields::new(stage, format!("persona_rationales.{id}"), rm);
        rationales.insert(
            *id,
            RationaleDraft {
                relevance_score: rf.unit("relevance_score")?,
                matched_goals: rf.opt_strings("matched_goals")?,
                matched_pain_points: rf.opt_strings("matched_pain_points")?,
                use_case_fit: rf.opt_string("use_case_fit")?,
                impact_level: rf.enumerated(
                    "impact_level",
                    &[
                        ("high", ImpactLevel::High),
                        ("medium", ImpactLevel::Medium),
                        ("low", ImpactLevel::Low),
                    ],
                )?,
                rationale: rf.nonempty_string("rationale")?,
            },
        );
    }
    let nf = Fields::new(stage, "analysis_notes", f.object("analysis_notes")?);
    let analysis_notes = AnalysisNotes {
        issue_type: nf.enumerated(
            "issue_type",
            &[
                ("bug", IssueType::Bug),
                ("feature", IssueType::Feature),
                ("enhancement", IssueType::Enhancement),
            ],
        )?,
        technical_level: nf.enumerated(
            "technical_level",
            &[
                ("beginner", TechnicalLevel::Beginner),
                ("intermediate", TechnicalLevel::Intermediate),
                ("advanced", TechnicalLevel::Advanced),
            ],
        )?,
        urgency_indicators: nf.opt_strings("urgency_indicators")?,
    };
    Ok(MappingDraft {
        matched,
        primary,
        confidence,
        reasoning: f.opt_string("reasoning")?,
        rationales,
        analysis_notes,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use serde_json::json;

    use super::*;

    pub(crate) fn persona_json(name: &str, age: u32) -> Value {
        json!({
            "name": name, "age": age, "occupation": "Freelance Music Composer",
            "location": "Osaka, Japan", "quote": "q", "tagline": "t", "background": "b",
            "personality_traits": ["calm"], "goals": ["g1", "g2"], "pain_points": ["p1"],
            "technical_skills": ["Sibelius"], "experience_level": "intermediate",
            "confidence_score": 0.8
        })
    }

    fn mapping_json() -> Value {
        json!({
            "matched_persona_ids": [2, 1], "primary_persona_id": 2, "confidence": 0.9,
            "reasoning": "r",
            "persona_rationales": {
                "1": {"relevance_score": 0.7, "matched_goals": ["g"], "matched_pain_points": [],
                      "use_case_fit": "u", "impact_level": "medium", "rationale": "quote"},
                "2": {"relevance_score": 0.9, "matched_goals": [], "matched_pain_points": ["p"],
                      "use_case_fit": "u", "impact_level": "high", "rationale": "quote"}
            },
            "analysis_notes": {"issue_type": "bug", "technical_level": "advanced",
                               "urgency_indicators": ["crash"]}
        })
    }

    #[test]
    fn four_personas_parse() {
        let raw = json!({"personas": (0..4).map(|i| persona_json(&format!("P{i}"), 30 + i)).collect::<Vec<_>>()});
        let out = parse_stage_output(Stage::PersonaGeneration, &raw.to_string()).unwrap();
        let StageOutput::Personas(ps) = out else {
            panic!()
        };
        assert_eq!(ps.len(), 4);
        assert_eq!(ps[0].experience_level, ExperienceLevel::Intermediate);
    }

    #[test]
    fn generated_persona_outside_age_range_is_rejected() {
        let raw = json!({"personas": [persona_json("Young", 24)]}).to_string();
        let err = parse_personas(&raw).unwrap_err();
        assert!(err.to_string().contains("personas[0].age"), "{err}");
    }

    #[test]
    fn prose_and_fences_are_tolerated() {
        let body = mapping_json().to_string();
        for raw in [
            format!("Here is the JSON: ```json {body} ```"),
            format!("Sure!\n```json\n{body}\n```\nLet me know."),
            format!("```\n{body}\n```"),
            format!("The answer {{as requested}}: {body} -- done"),
            body.clone(),
        ] {
            let d = parse_mapping(&raw).unwrap_or_else(|e| panic!("{raw}: {e}"));
            assert_eq!(d.matched, vec![2, 1]);
        }
    }

    #[test]
    fn primary_outside_matches_is_rejected() {
        let mut v = mapping_json();
        v["primary_persona_id"] = json!(3);
        let err = parse_mapping(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("primary_persona_id"), "{err}");
    }

    #[test]
    fn matched_persona_needs_a_rationale() {
        let mut v = mapping_json();
        v["persona_rationales"]["1"]["rationale"] = json!("  ");
        assert!(parse_mapping(&v.to_string()).is_err());
        v["persona_rationales"].as_object_mut().unwrap().remove("1");
        let err = parse_mapping(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("persona_rationales.1"), "{err}");
    }

    #[test]
    fn empty_match_is_legal() {
        let v = json!({"matched_persona_ids": [], "primary_persona_id": null, "confidence": 0.0,
                       "reasoning": "no match", "persona_rationales": {},
                       "analysis_notes": {"issue_type": "feature", "technical_level": "beginner"}});
        let d = parse_mapping(&v.to_string()).unwrap();
        let m = d.resolve(9, &[PersonaId::from("a")]).unwrap();
        assert!(m.associations.is_empty());
        assert_eq!(m.primary_persona_id, None);
    }

    #[test]
    fn resolve_maps_positions_to_ids() {
        let d = parse_mapping(&mapping_json().to_string()).unwrap();
        let ids = [PersonaId::from("a"), PersonaId::from("b")];
        let m = d.clone().resolve(30, &ids).unwrap();
        assert_eq!(m.primary_persona_id, Some(PersonaId::from("b")));
        assert_eq!(m.associations[0].persona_id, PersonaId::from("b"));
        assert!(m.check().is_ok());
        assert!(d.resolve(30, &ids[..1]).is_err());
    }

    #[test]
    fn string_ids_are_accepted() {
        let mut v = mapping_json();
        v["matched_persona_ids"] = json!(["2", "1"]);
        v["primary_persona_id"] = json!("2");
        assert_eq!(parse_mapping(&v.to_string()).unwrap().primary, Some(2));
    }

    #[test]
    fn link_plan_validation() {
        let ok = json!({"internal_links": [{"path": "docs/USAGE.md", "expected_content": "e",
                         "user_relevance": "u", "priority": 4}],
                        "external_links": [{"url": "https://sheetable.net/", "expected_content": "e",
                         "user_relevance": "u", "priority": 5}],
                        "reasoning": "homepage"});
        let plan = parse_link_plan(&ok.to_string()).unwrap();
        assert_eq!(plan.external[0].priority, 5);
        let mut bad = ok.clone();
        bad["external_links"][0]["priority"] = json!(6);
        assert!(parse_link_plan(&bad.to_string()).is_err());
        let mut bad = ok.clone();
        bad["reasoning"] = json!("");
        assert!(parse_link_plan(&bad.to_string()).is_err());
        let empty = json!({"internal_links": [], "external_links": [], "reasoning": "no links"});
        assert_eq!(
            parse_link_plan(&empty.to_string()).unwrap().internal.len(),
            0
        );
    }

    #[test]
    fn domain_analysis_needs_features() {
        let v = json!({"domain_summary": "s", "key_features": [], "user_characteristics": [],
                       "additional_insights": []});
        let err = parse_domain_analysis(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("key_features"));
    }

    #[test]
    fn insights_need_all_six_fields() {
        let mut v = json!({"user_types": ["a"], "primary_use_cases": ["b"], "user_needs": ["c"],
                           "pain_points": ["d"], "community_insights": "e",
                           "persona_recommendations": ["f"]});
        assert!(parse_user_insights(&v.to_string()).is_ok());
        v.as_object_mut().unwrap().remove("user_needs");
        let err = parse_user_insights(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("user_needs"));
    }

    #[test]
    fn merged_persona_has_no_confidence() {
        let mut v = persona_json("Technical Integration Specialist", 40);
        v.as_object_mut().unwrap().remove("confidence_score");
        let p = parse_merged(&v.to_string()).unwrap();
        assert_eq!(p.confidence_score, 0.0);
    }

    #[test]
    fn empty_and_garbage_inputs_fail_cleanly() {
        for raw in ["", "   ", "null", "[1,2]", "{", "```json\n```", "}{"] {
            for stage in Stage::ALL {
                assert!(parse_stage_output(stage, raw).is_err(), "{stage} {raw:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn never_panics_on_arbitrary_text(raw in ".{0,400}") {
            for stage in Stage::ALL {
                let _ = parse_stage_output(stage, &raw);
            }
        }

        #[test]
        fn wrappers_without_braces_never_hide_the_object(
            pre in "[a-zA-Z0-9 .,:!\n]{0,60}",
            post in "[a-zA-Z0-9 .,:!\n]{0,60}",
        ) {
            let raw = format!("{pre}{}{post}", mapping_json());
            prop_assert!(parse_mapping(&raw).is_ok());
        }
    }
}
