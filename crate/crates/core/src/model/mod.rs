//! Domain types shared by the pipeline, the store, the HTTP API and the CLI.
//!
//! Field names are the canonical snake_case wire names; every type here
//! round-trips through `serde_json` unchanged.

mod analytics;
mod band;
mod corpus;
mod issue;
mod mapping;
mod persona;
mod repo;

pub use analytics::{AnalyticsSummary, MappingStatus};
pub use band::{band_of, ConfidenceBand};
pub use corpus::{
    DomainAnalysis, KeyFeature, ResourceCorpus, ResourceDocument, SourceKind, UserCharacteristic,
    UserInsights,
};
pub use issue::{IssueRecord, IssueState};
pub use mapping::{
    AnalysisNotes, Association, ImpactLevel, IssuePersonaMapping, IssueType, Origin, TechnicalLevel,
};
pub use persona::{
    validate_persona, AvatarKind, AvatarRef, ExperienceLevel, Persona, PersonaId, PersonaProfile,
    Provenance, Violation, AI_AGE_RANGE,
};
pub use repo::{RepoId, RepositoryRef};

#[cfg(test)]
pub(crate) use persona::tests as persona_tests;
