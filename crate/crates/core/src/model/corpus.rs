use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::RepositoryRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Readme,
    InternalLink,
    ExternalLink,
    UserProvided,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Readme => "readme",
            SourceKind::InternalLink => "internal_link",
            SourceKind::ExternalLink => "external_link",
            SourceKind::UserProvided => "user_provided",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceDocument {
    pub source_kind: SourceKind,
    /// Repo-relative path for readme and internal links, absolute URL for
    /// external links, free-form label for user text.
    pub locator: String,
    #[serde(default)]
    pub expected_content: String,
    #[serde(default)]
    pub user_relevance: String,
    pub priority: u8,
    pub content_text: String,
    pub fetched_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceCorpus {
    pub repo: RepositoryRef,
    pub documents: Vec<ResourceDocument>,
    pub total_chars: usize,
    pub truncated: bool,
}

impl ResourceCorpus {
    /// Text block fed to the analysis prompts: each document under a
    /// `### locator (kind)` heading, separated by blank lines.
    pub fn render(&self) -> String {
        self.documents
            .iter()
            .map(|d| {
                format!(
                    "### {} ({})\n{}",
                    d.locator,
                    d.source_kind.as_str(),
                    d.content_text
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserInsights {
    pub user_types: Vec<String>,
    pub primary_use_cases: Vec<String>,
    pub user_needs: Vec<String>,
    pub pain_points: Vec<String>,
    pub community_insights: String,
    pub persona_recommendations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFeature {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserCharacteristic {
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub context: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainAnalysis {
    pub domain_summary: String,
    pub key_features: Vec<KeyFeature>,
    #[serde(default)]
    pub user_characteristics: Vec<UserCharacteristic>,
    #[serde(default)]
    pub additional_insights: Vec<String>,
}
