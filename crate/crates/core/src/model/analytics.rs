use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PersonaId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsSummary {
    pub total_issues: usize,
    pub active_personas: usize,
    pub coverage_rate: f64,
    pub repo_stars: u64,
    pub label_distribution: BTreeMap<String, usize>,
    pub persona_coverage: BTreeMap<PersonaId, usize>,
}

/// Counts behind the mapping-status panel. An issue is `mapped` when it has
/// at least one visible association; `pending` counts issues that have not
/// been through the mapper at all (they are also `unmapped`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingStatus {
    pub total: usize,
    pub mapped: usize,
    pub unmapped: usize,
    pub pending: usize,
}
