//! Prompt rendering for the seven pipeline stages.
//!
//! [`render_prompt`] substitutes context values into the verbatim templates
//! in a single left-to-right pass: substituted text is never rescanned, so a
//! readme that happens to contain `[N]` is passed through untouched.

mod templates;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use templates::HEADSHOT_TEMPLATES;

/// Instruction appended to the user prompt when re-asking after an
/// unparseable response.
pub const REPAIR_INSTRUCTION: &str = "Return only valid JSON matching the requested format.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    LinkDiscovery,
    UserInsights,
    DomainAnalysis,
    PersonaGeneration,
    Headshot,
    Merge,
    IssueMapping,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::LinkDiscovery,
        Stage::UserInsights,
        Stage::DomainAnalysis,
        Stage::PersonaGeneration,
        Stage::Headshot,
        Stage::Merge,
        Stage::IssueMapping,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::LinkDiscovery => "link_discovery",
            Stage::UserInsights => "user_insights",
            Stage::DomainAnalysis => "domain_analysis",
            Stage::PersonaGeneration => "persona_generation",
            Stage::Headshot => "headshot",
            Stage::Merge => "merge",
            Stage::IssueMapping => "issue_mapping",
        }
    }

    /// Schema the stage's output is validated against.
    pub fn schema_id(self) -> &'static str {
        match self {
            Stage::LinkDiscovery => "link_plan",
            Stage::UserInsights => "user_insights",
            Stage::DomainAnalysis => "domain_analysis",
            Stage::PersonaGeneration => "persona_list",
            Stage::Headshot => "image",
            Stage::Merge => "merged_persona",
            Stage::IssueMapping => "issue_persona_mapping",
        }
    }

    /// Whether the stage is an image call rather than a text completion.
    pub fn is_image(self) -> bool {
        self == Stage::Headshot
    }

    /// `(context key, template token)` pairs the stage requires.
    pub fn placeholders(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Stage::LinkDiscovery => &[("owner_repo", "[owner/repo]"), ("readme_text", "[README text]")],
            Stage::UserInsights => &[
                ("owner_repo", "[owner/repo]"),
                (
                    "corpus",
                    "[Resource Corpus content with internal and external documentation]",
                ),
            ],
            Stage::DomainAnalysis => &[("repository_content", "[README and additional context]")],
            Stage::PersonaGeneration => &[("n", "[N]"), ("domain_analysis", "[JSON domain analysis]")],
            Stage::Headshot => &[
                ("gender_hint", "[gender hint]"),
                ("age", "[age]"),
                ("occupation", "[occupation]"),
                ("expression", "[expression]"),
                ("clothing_style", "[clothing style]"),
                ("setting", "[setting]"),
                ("photography_style", "[photography style]"),
            ],
            Stage::Merge => &[
                ("n", "[N]"),
                (
                    "personas",
                    "[Detailed persona descriptions including name, age, occupation, location,\nquote, tagline, background, personality traits, goals, pain points,\ntechnical skills, experience level, and tags for each persona]",
                ),
            ],
            Stage::IssueMapping => &[("issue", "[Title, Body, Labels]"), ("personas", "[JSON personas]")],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

pub type PromptContext = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub stage: Stage,
    pub system_text: String,
    pub user_text: String,
    pub expected_schema: String,
    /// The values substituted into the template, kept for fixture keying.
    pub context: PromptContext,
    /// Set on the single repair re-ask.
    #[serde(default)]
    pub repair: bool,
}

impl PromptBundle {
    /// Stable fingerprint of the substituted values: sha-256 over the sorted
    /// `key NUL value NUL` sequence, stage and repair flag included.
    pub fn fixture_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.stage.as_str().as_bytes());
        h.update([0]);
        for (k, v) in &self.context {
            h.update(k.as_bytes());
            h.update([0]);
            h.update(v.as_bytes());
            h.update([0]);
        }
        if self.repair {
            h.update(b"repair");
        }
        hex::encode(&h.finalize()[..8])
    }

    /// The re-ask sent once after an unparseable response.
    pub fn repaired(&self) -> PromptBundle {
        let mut b = self.clone();
        b.user_text = format!("{}\n\n{}", self.user_text, REPAIR_INSTRUCTION);
        b.repair = true;
        b
    }
}

pub fn render_prompt(stage: Stage, context: &PromptContext) -> Result<PromptBundle> {
    let (system, template) = match stage {
        Stage::LinkDiscovery => (
            templates::LINK_DISCOVERY_SYSTEM,
            templates::LINK_DISCOVERY_USER,
        ),
        Stage::UserInsights => (
            templates::USER_INSIGHTS_SYSTEM,
            templates::USER_INSIGHTS_USER,
        ),
        Stage::DomainAnalysis => (
            templates::DOMAIN_ANALYSIS_SYSTEM,
            templates::DOMAIN_ANALYSIS_USER,
        ),
        Stage::PersonaGeneration => (
            templates::PERSONA_GENERATION_SYSTEM,
            templates::PERSONA_GENERATION_USER,
        ),
        Stage::Merge => (templates::MERGE_SYSTEM, templates::MERGE_USER),
        Stage::IssueMapping => (
            templates::ISSUE_MAPPING_SYSTEM,
            templates::ISSUE_MAPPING_USER,
        ),
        Stage::Headshot => {
            let index = context
                .get("template")
                .ok_or(Error::MissingPlaceholder {
                    stage,
                    placeholder: "template",
                })?
                .parse::<usize>()
                .ok()
                .filter(|i| (1..=HEADSHOT_TEMPLATES.len()).contains(i))
                .ok_or_else(|| {
                    Error::InvalidParams("headshot template must be 1, 2 or 3".into())
                })?;
            ("", HEADSHOT_TEMPLATES[index - 1])
        }
    };
    let mut user_text = substitute(stage, template, context)?;
    match stage {
        Stage::PersonaGeneration => {
            if let Some(existing) = context.get("existing_personas").filter(|s| !s.is_empty()) {
                user_text
                    .push_str("\n\nExisting personas (create personas distinct from these):\n");
                user_text.push_str(existing);
            }
        }
        Stage::Merge => {
            if let Some(guidance) = context.get("guidance").filter(|s| !s.trim().is_empty()) {
                user_text.push_str("\n\nUser guidance: ");
                user_text.push_str(guidance.trim());
            }
        }
        _ => {}
    }
    Ok(PromptBundle {
        stage,
        system_text: system.to_string(),
        user_text,
        expected_schema: stage.schema_id().to_string(),
        context: context.clone(),
        repair: false,
    })
}

fn substitute(stage: Stage, template: &str, context: &PromptContext) -> Result<String> {
    let slots = stage.placeholders();
    let mut values = Vec::with_capacity(slots.len());
    for (key, token) in slots {
        let value = context.get(*key).ok_or(Error::MissingPlaceholder {
            stage,
            placeholder: key,
        })?;
        values.push((*token, value.as_str()));
    }
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    loop {
        let next = values
            .iter()
            .filter_map(|(token, value)| rest.find(token).map(|at| (at, *token, *value)))
            .min_by_key(|(at, _, _)| *at);
        match next {
            Some((at, token, value)) => {
                out.push_str(&rest[..at]);
                out.push_str(value);
                rest = &rest[at + token.len()..];
            }
            None => {
                out.push_str(rest);
                return Ok(out);
            }
        }
    }
}

/// Shorthand for building a context from string pairs.
pub fn context<K: Into<String>, V: Into<String>>(
    pairs: impl IntoIterator<Item = (K, V)>,
) -> PromptContext {
    pairs
        .into_iter()
        .map(|(k, v)| (k.into(), v.into()))
        .collect()
}
