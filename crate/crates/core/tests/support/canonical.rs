//! Canonical placeholder values for the golden prompt files. Shared with the
//! acceptance suite through `#[path]`.

use std::path::{Path, PathBuf};

use personaflow_core::prompts::{context, PromptContext, Stage};

pub const README: &str = "# SheetAble\nAn easy-to-use music sheet organizer for all the music enthusiasts out there.\n\nWebsite: https://sheetable.net/";
pub const CORPUS: &str =
    "### README.md (readme)\n# SheetAble\nAn easy-to-use music sheet organizer.";
pub const DOMAIN: &str = r#"{"domain_summary":"A self-hosted music sheet organizer","key_features":[{"name":"Sheet organization","description":"Upload and sort sheets"}],"user_characteristics":[],"additional_insights":[]}"#;
pub const ISSUE: &str = "Title: Limit on characters when inputting sheet and composer name\nBody: Long names are drawn on top of the sheet thumbnail.\nLabels: bug";
pub const PERSONAS: &str =
    r#"[{"id":1,"name":"Akira Nakamura","occupation":"Freelance Music Composer"}]"#;
pub const MERGE_SOURCES: &str = "Persona 1:\nname: Akira Nakamura\nPersona 2:\nname: Priya Singh";

/// `(golden file stem, stage, context)` for every rendered prompt.
pub fn cases() -> Vec<(String, Stage, PromptContext)> {
    let mut out = vec![
        (
            "link_discovery".to_string(),
            Stage::LinkDiscovery,
            context([
                ("owner_repo", "SheetAble/SheetAble"),
                ("readme_text", README),
            ]),
        ),
        (
            "user_insights".to_string(),
            Stage::UserInsights,
            context([("owner_repo", "SheetAble/SheetAble"), ("corpus", CORPUS)]),
        ),
        (
            "domain_analysis".to_string(),
            Stage::DomainAnalysis,
            context([("repository_content", CORPUS)]),
        ),
        (
            "persona_generation".to_string(),
            Stage::PersonaGeneration,
            context([("n", "4"), ("domain_analysis", DOMAIN)]),
        ),
        (
            "merge".to_string(),
            Stage::Merge,
            context([("n", "2"), ("personas", MERGE_SOURCES)]),
        ),
        (
            "issue_mapping".to_string(),
            Stage::IssueMapping,
            context([("issue", ISSUE), ("personas", PERSONAS)]),
        ),
    ];
    for template in 1..=3 {
        out.push((
            format!("headshot_{template}"),
            Stage::Headshot,
            context([
                ("template", template.to_string().as_str()),
                ("gender_hint", "a person"),
                ("age", "34"),
                ("occupation", "Freelance Music Composer"),
                ("expression", "Focused"),
                ("clothing_style", "creative casual attire"),
                ("setting", "A home studio with a piano and sheet music"),
                ("photography_style", "Soft window light"),
            ]),
        ));
    }
    out
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}
