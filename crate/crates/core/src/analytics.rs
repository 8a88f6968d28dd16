//! Dashboard aggregates computed from a store snapshot.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{AnalyticsSummary, IssuePersonaMapping, IssueRecord, MappingStatus, PersonaId};

/// Label bucket for issues without labels.
pub const UNLABELED: &str = "(none)";

/// Visible associations of `mapping` that point at an active persona.
fn covered_by<'a>(
    mapping: Option<&'a IssuePersonaMapping>,
    active: &'a BTreeSet<&PersonaId>,
) -> impl Iterator<Item = &'a PersonaId> + 'a {
    mapping
        .into_iter()
        .flat_map(|m| m.visible())
        .map(|a| &a.persona_id)
        .filter(move |id| active.contains(id))
}

pub fn compute_summary(
    issues: &[IssueRecord],
    mappings: &BTreeMap<u64, IssuePersonaMapping>,
    active_personas: &[PersonaId],
    repo_stars: u64,
) -> AnalyticsSummary {
    let active: BTreeSet<&PersonaId> = active_personas.iter().collect();
    let mut label_distribution = BTreeMap::new();
    let mut persona_coverage: BTreeMap<PersonaId, usize> =
        active_personas.iter().map(|id| (id.clone(), 0)).collect();
    let mut mapped = 0;
    for issue in issues {
        if issue.labels.is_empty() {
            *label_distribution.entry(UNLABELED.to_string()).or_insert(0) += 1;
        }
        for label in issue.labels.iter().collect::<BTreeSet<_>>() {
            *label_distribution.entry(label.clone()).or_insert(0) += 1;
        }
        let personas: BTreeSet<&PersonaId> =
            covered_by(mappings.get(&issue.number), &active).collect();
        if !personas.is_empty() {
            mapped += 1;
        }
        for id in personas {
            *persona_coverage.get_mut(id).expect("active persona") += 1;
        }
    }
    AnalyticsSummary {
        total_issues: issues.len(),
        active_personas: active_personas.len(),
        coverage_rate: if issues.is_empty() {
            0.0
        } else {
            mapped as f64 / issues.len() as f64
        },
        repo_stars,
        label_distribution,
        persona_coverage,
    }
}

pub fn mapping_status(
    issues: &[IssueRecord],
    mappings: &BTreeMap<u64, IssuePersonaMapping>,
    active_personas: &[PersonaId],
) -> MappingStatus {
    let active: BTreeSet<&PersonaId> = active_personas.iter().collect();
    let mut status = MappingStatus {
        total: issues.len(),
        mapped: 0,
        unmapped: 0,
        pending: 0,
    };
    for issue in issues {
        let m = mappings.get(&issue.number);
        if m.is_none() {
            status.pending += 1;
        }
        if covered_by(m, &active).next().is_some() {
            status.mapped += 1;
        } else {
            status.unmapped += 1;
        }
    }
    status
}
