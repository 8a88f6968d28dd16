//! Plain-text and markdown rendering for terminal output.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use personaflow_core::jobs::JobSnapshot;
use personaflow_core::model::{
    AnalyticsSummary, MappingStatus, Origin, PersonaId, Provenance, RepoId,
};
use personaflow_core::service::{IssueDetail, IssueListing, IssueRow, PersonaView, RepoSummary};

/// Left-aligned columns separated by two spaces.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut out = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i + 1 == cells.len() {
                out.push_str(cell);
            } else {
                let _ = write!(out, "{cell:<w$}  ");
            }
        }
        out.trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn provenance(p: Provenance) -> &'static str {
    match p {
        Provenance::AiGenerated => "ai",
        Provenance::Manual => "manual",
        Provenance::Merged => "merged",
    }
}

fn origin(o: Origin) -> &'static str {
    match o {
        Origin::AiSuggested => "ai-suggested",
        Origin::Manual => "manual",
    }
}

pub fn personas_table(personas: &[PersonaView]) -> String {
    let rows: Vec<Vec<String>> = personas
        .iter()
        .map(|v| {
            let p = &v.persona;
            let mut tag = provenance(p.provenance).to_string();
            if p.edited {
                tag.push_str(", edited");
            }
            if v.archived {
                tag.push_str(", archived");
            }
            vec![
                p.id.to_string(),
                p.profile.name.clone(),
                p.profile.age.to_string(),
                p.profile.occupation.clone(),
                p.profile.experience_level.as_str().to_string(),
                format!("{:.0}%", p.profile.confidence_score * 100.0),
                tag,
            ]
        })
        .collect();
    table(
        &[
            "ID",
            "NAME",
            "AGE",
            "OCCUPATION",
            "EXPERIENCE",
            "CONFIDENCE",
            "ORIGIN",
        ],
        &rows,
    )
}

fn bullets(out: &mut String, items: &[String]) {
    for item in items {
        let _ = writeln!(out, "- {item}");
    }
}

/// One persona as a markdown card: avatar, demographics, quote, background,
/// goals, then pain points, followed by the remaining profile fields.
pub fn persona_markdown(v: &PersonaView) -> String {
    let p = &v.persona.profile;
    let mut out = String::new();
    let _ = writeln!(out, "## {}\n", p.name);
    let _ = writeln!(out, "![{}]({})\n", p.name, v.persona.avatar.locator);
    if !p.tagline.is_empty() {
        let _ = writeln!(out, "*{}*\n", p.tagline);
    }
    let _ = writeln!(out, "- **Age:** {}", p.age);
    let _ = writeln!(out, "- **Occupation:** {}", p.occupation);
    let _ = writeln!(out, "- **Location:** {}", p.location);
    let _ = writeln!(out, "- **Experience:** {}\n", p.experience_level.as_str());
    let _ = writeln!(out, "> {}\n", p.quote);
    let _ = writeln!(out, "### Background\n\n{}\n", p.background);
    let _ = writeln!(out, "### Goals and motivations\n");
    bullets(&mut out, &p.goals);
    let _ = writeln!(out, "\n### Pain points and frustrations\n");
    bullets(&mut out, &p.pain_points);
    if !p.technical_skills.is_empty() {
        let _ = writeln!(out, "\n### Technical skills\n");
        bullets(&mut out, &p.technical_skills);
    }
    if !p.personality_traits.is_empty() {
        let _ = writeln!(out, "\n### Personality\n");
        bullets(&mut out, &p.personality_traits);
    }
    let mut tag = provenance(v.persona.provenance).to_string();
    if v.persona.edited {
        tag.push_str(", edited");
    }
    let _ = writeln!(
        out,
        "\n<sub>{tag}; confidence {:.0}%; id {}</sub>",
        p.confidence_score * 100.0,
        v.persona.id
    );
    out
}

pub fn personas_markdown(repo: &RepoId, personas: &[PersonaView]) -> String {
    let mut out = format!("# Personas for {repo}\n\n");
    let cards: Vec<String> = personas.iter().map(persona_markdown).collect();
    out.push_str(&cards.join("\n"));
    out
}

fn badges(row: &IssueRow) -> String {
    row.badges
        .iter()
        .map(|b| {
            let mark = if b.origin == Origin::Manual {
                " (manual)"
            } else {
                ""
            };
            format!("{} {}% {}{mark}", b.persona_name, b.percent, b.band)
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn issue_rows(rows: &[IssueRow]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("#{}", r.issue.number),
                r.issue.title.clone(),
                r.issue.labels.join(","),
                badges(r),
            ]
        })
        .collect();
    table(&["ISSUE", "TITLE", "LABELS", "PERSONAS"], &cells)
}

pub fn issue_listing(listing: &IssueListing) -> String {
    match listing {
        IssueListing::Github { issues } => issue_rows(issues),
        IssueListing::Persona { groups, unassigned } => {
            let mut out = String::new();
            for g in groups {
                let _ = writeln!(out, "== {} ({} issues)", g.persona_name, g.count);
                out.push_str(&issue_rows(&g.issues));
                out.push('\n');
            }
            if !unassigned.is_empty() {
                let _ = writeln!(out, "== Unassigned ({} issues)", unassigned.len());
                out.push_str(&issue_rows(unassigned));
            }
            out
        }
    }
}

pub fn issue_detail(d: &IssueDetail) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "#{} {} [{:?}]",
        d.issue.number, d.issue.title, d.issue.state
    );
    if !d.issue.labels.is_empty() {
        let _ = writeln!(out, "labels: {}", d.issue.labels.join(", "));
    }
    let _ = writeln!(out, "mapping version: {}", d.mapping_version);
    if !d.reasoning.is_empty() {
        let _ = writeln!(out, "\nreasoning: {}", d.reasoning);
    }
    if d.associations.is_empty() {
        let _ = writeln!(out, "\nno persona associated");
    }
    for a in &d.associations {
        let primary = if Some(&a.association.persona_id) == d.primary_persona_id.as_ref() {
            " [primary]"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "\n{} {}% {} ({}){primary}\n  why: {}\n  id: {}",
            a.persona_name,
            a.percent,
            a.band,
            origin(a.association.origin),
            a.association.rationale,
            a.association.persona_id,
        );
    }
    out
}

pub fn analytics(
    repo: &RepoId,
    a: &AnalyticsSummary,
    status: &MappingStatus,
    names: &BTreeMap<PersonaId, String>,
) -> String {
    let mut out = table(
        &["METRIC", "VALUE"],
        &[
            vec!["Repository".into(), repo.to_string()],
            vec!["Total issues".into(), a.total_issues.to_string()],
            vec!["Active personas".into(), a.active_personas.to_string()],
            vec![
                "Coverage rate".into(),
                format!("{:.1}%", a.coverage_rate * 100.0),
            ],
            vec!["Repository stars".into(), a.repo_stars.to_string()],
            vec![
                "Mapping status".into(),
                format!(
                    "{} mapped, {} unmapped, {} not yet analyzed",
                    status.mapped, status.unmapped, status.pending
                ),
            ],
        ],
    );
    let labels: Vec<Vec<String>> = a
        .label_distribution
        .iter()
        .map(|(l, n)| vec![l.clone(), n.to_string()])
        .collect();
    out.push('\n');
    out.push_str(&table(&["LABEL", "ISSUES"], &labels));
    let mut coverage: Vec<(String, usize)> = a
        .persona_coverage
        .iter()
        .map(|(id, n)| (names.get(id).cloned().unwrap_or_else(|| id.to_string()), *n))
        .collect();
    coverage.sort_by(|x, y| y.1.cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    let personas: Vec<Vec<String>> = coverage
        .into_iter()
        .map(|(name, n)| vec![name, n.to_string()])
        .collect();
    out.push('\n');
    out.push_str(&table(&["PERSONA", "ISSUES"], &personas));
    out
}

pub fn repos(list: &[RepoSummary]) -> String {
    let rows: Vec<Vec<String>> = list
        .iter()
        .map(|r| {
            vec![
                r.repo_id.to_string(),
                format!("{}/{}/{}", r.repo.host, r.repo.owner, r.repo.name),
                r.repo.stars.to_string(),
                r.active_personas.to_string(),
                r.issues.to_string(),
            ]
        })
        .collect();
    table(&["ID", "URL", "STARS", "PERSONAS", "ISSUES"], &rows)
}

pub fn job(s: &JobSnapshot) -> String {
    let mut out = format!(
        "{} {} {} {}% ({})",
        s.job_id,
        s.kind.as_str(),
        s.stage,
        s.percent,
        s.repo_id
    );
    if let Some(e) = &s.error {
        let _ = write!(out, "\n  error: {e}");
    }
    for w in &s.warnings {
        let _ = write!(out, "\n  warning: {w}");
    }
    out
}
