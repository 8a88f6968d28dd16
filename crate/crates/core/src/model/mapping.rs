use serde::{Deserialize, Serialize};

use super::{band_of, ConfidenceBand, PersonaId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    AiSuggested,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactLevel {
    High,
    Medium,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueType {
    Bug,
    Feature,
    Enhancement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TechnicalLevel {
    Beginner,
    Intermediate,
    Advanced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisNotes {
    pub issue_type: IssueType,
    pub technical_level: TechnicalLevel,
    #[serde(default)]
    pub urgency_indicators: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub persona_id: PersonaId,
    pub origin: Origin,
    pub relevance_score: f64,
    #[serde(default)]
    pub matched_goals: Vec<String>,
    #[serde(default)]
    pub matched_pain_points: Vec<String>,
    #[serde(default)]
    pub use_case_fit: String,
    pub impact_level: ImpactLevel,
    pub rationale: String,
    /// Removed by a person; kept for the audit trail, hidden everywhere else.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tombstoned: bool,
}

impl Association {
    pub fn band(&self) -> ConfidenceBand {
        band_of(self.relevance_score.clamp(0.0, 1.0)).unwrap_or(ConfidenceBand::Unmatched)
    }

    /// Whole-number percentage shown on badges.
    pub fn percent(&self) -> u8 {
        (self.relevance_score.clamp(0.0, 1.0) * 100.0).round() as u8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssuePersonaMapping {
    pub issue_number: u64,
    pub associations: Vec<Association>,
    pub primary_persona_id: Option<PersonaId>,
    pub confidence: f64,
    #[serde(default)]
    pub reasoning: String,
    /// Absent when the mapping only holds manual associations.
    #[serde(default)]
    pub analysis_notes: Option<AnalysisNotes>,
}

impl IssuePersonaMapping {
    pub fn empty(issue_number: u64) -> Self {
        IssuePersonaMapping {
            issue_number,
            associations: Vec::new(),
            primary_persona_id: None,
            confidence: 0.0,
            reasoning: String::new(),
            analysis_notes: None,
        }
    }

    /// Associations that are not tombstoned. Band filtering is left to the
    /// caller.
    pub fn live(&self) -> impl Iterator<Item = &Association> {
        self.associations.iter().filter(|a| !a.tombstoned)
    }

    /// Associations that count toward coverage and badges: live, and not
    /// in the hidden `unmatched` band.
    pub fn visible(&self) -> impl Iterator<Item = &Association> {
        self.live().filter(|a| a.band().visible_by_default())
    }

    /// The live association for `id`, or failing that its most recent
    /// tombstoned one.
    pub fn association(&self, id: &PersonaId) -> Option<&Association> {
        self.live()
            .find(|a| &a.persona_id == id)
            .or_else(|| self.associations.iter().rev().find(|a| &a.persona_id == id))
    }

    /// Structural invariants: primary among live associations, rationale on
    /// every AI suggestion, scores in range.
    pub fn check(&self) -> Result<(), String> {
        if let Some(primary) = &self.primary_persona_id {
            if !self.live().any(|a| &a.persona_id == primary) {
                return Err(format!(
                    "primary persona {primary} is not among the associations"
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        for a in &self.associations {
            if !(0.0..=1.0).contains(&a.relevance_score) {
                return Err(format!(
                    "relevance_score {} for {} outside [0, 1]",
                    a.relevance_score, a.persona_id
                ));
            }
            if a.origin == Origin::AiSuggested && a.rationale.trim().is_empty() {
                return Err(format!(
                    "AI suggestion for {} has no rationale",
                    a.persona_id
                ));
            }
        }
        Ok(())
    }
}
