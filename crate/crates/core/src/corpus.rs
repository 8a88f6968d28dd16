//! Resource corpus assembly: link discovery over the README, bounded
//! fetching of the planned links, visible-text extraction for HTML pages,
//! and the final capped, ordered corpus.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::Utc;
use scraper::{ElementRef, Html};

use crate::connector::RepoConnector;
use crate::error::{Error, Result};
use crate::http::{HttpRequest, USER_AGENT};
use crate::model::{RepositoryRef, ResourceCorpus, ResourceDocument, SourceKind};
use crate::parse::{parse_link_plan, LinkPlan, PlannedLink};
use crate::prompts::{context, render_prompt, Stage};
use crate::provider::LlmClient;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusLimits {
    /// Characters kept per document.
    pub per_document: usize,
    /// Characters kept across the whole corpus.
    pub total: usize,
    /// Planned links fetched, counted across internal and external lists.
    pub max_links: usize,
    /// Concurrent link fetches.
    pub fan_out: usize,
    pub fetch_timeout: Duration,
}

impl Default for CorpusLimits {
    fn default() -> Self {
        CorpusLimits {
            per_document: 40_000,
            total: 150_000,
            max_links: 5,
            fan_out: 4,
            fetch_timeout: Duration::from_secs(10),
        }
    }
}

/// A planned link chosen for fetching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectedLink {
    pub kind: SourceKind,
    pub link: PlannedLink,
}

/// Picks the `max` highest-priority links from the union of both lists.
/// Ties keep plan order: internal links first, then external, each in the
/// order the plan listed them.
pub fn select_links(plan: &LinkPlan, max: usize) -> Vec<SelectedLink> {
    let mut all: Vec<SelectedLink> = plan
        .internal
        .iter()
        .map(|l| SelectedLink {
            kind: SourceKind::InternalLink,
            link: l.clone(),
        })
        .chain(plan.external.iter().map(|l| SelectedLink {
            kind: SourceKind::ExternalLink,
            link: l.clone(),
        }))
        .collect();
    all.sort_by_key(|c| std::cmp::Reverse(c.link.priority));
    all.truncate(max);
    all
}

/// Outcome of a corpus build: the corpus plus one warning per link or user
/// document that could not be fetched.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusBuild {
    pub corpus: ResourceCorpus,
    pub warnings: Vec<String>,
}

pub struct CorpusBuilder {
    connector: Arc<RepoConnector>,
    limits: CorpusLimits,
}

impl CorpusBuilder {
    pub fn new(connector: Arc<RepoConnector>) -> Self {
        CorpusBuilder {
            connector,
            limits: CorpusLimits::default(),
        }
    }

    pub fn with_limits(mut self, limits: CorpusLimits) -> Self {
        self.limits = limits;
        self
    }

    pub fn limits(&self) -> &CorpusLimits {
        &self.limits
    }

    /// Asks the model which README links describe end users.
    pub fn discover_links(
        &self,
        llm: &LlmClient,
        repo: &RepositoryRef,
        readme: &ResourceDocument,
    ) -> Result<LinkPlan> {
        if readme.source_kind != SourceKind::Readme {
            return Err(Error::InvalidParams(
                "link discovery needs the readme document".into(),
            ));
        }
        let bundle = render_prompt(
            Stage::LinkDiscovery,
            &context([
                ("owner_repo", repo.full_name()),
                ("readme_text", readme.content_text.clone()),
            ]),
        )?;
        llm.complete_parsed(&bundle, parse_link_plan)
    }

    /// Fetches a documentation URL the user supplied.
    pub fn fetch_user_url(&self, url: &str) -> Result<ResourceDocument> {
        let text = self.fetch_page(url)?;
        Ok(ResourceDocument {
            source_kind: SourceKind::UserProvided,
            locator: url.to_string(),
            expected_content: "user-provided documentation".into(),
            user_relevance: "supplied by the user as additional context".into(),
            priority: 5,
            content_text: text,
            fetched_at: Utc::now(),
        })
    }

    /// Fetches the selected plan links with bounded concurrency. Results
    /// keep selection order; failures become warnings.
    pub fn fetch_plan(
        &self,
        repo: &RepositoryRef,
        plan: &LinkPlan,
    ) -> (Vec<ResourceDocument>, Vec<String>) {
        let selected = select_links(plan, self.limits.max_links);
        let slots: Vec<Mutex<Option<Result<ResourceDocument>>>> =
            selected.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..self.limits.fan_out.max(1).min(selected.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(sel) = selected.get(i) else { break };
                    *slots[i].lock().unwrap() = Some(self.fetch_link(repo, sel));
                });
            }
        });
        let mut docs = Vec::new();
        let mut warnings = Vec::new();
        for (sel, slot) in selected.iter().zip(slots) {
            match slot.into_inner().unwrap() {
                Some(Ok(doc)) => docs.push(doc),
                Some(Err(e)) => warnings.push(format!("skipped {}: {e}", sel.link.locator)),
                None => warnings.push(format!("skipped {}: not fetched", sel.link.locator)),
            }
        }
        (docs, warnings)
    }

    fn fetch_link(&self, repo: &RepositoryRef, sel: &SelectedLink) -> Result<ResourceDocument> {
        let content_text = match sel.kind {
            SourceKind::InternalLink => self.connector.fetch_raw_file(repo, &sel.link.locator)?,
            _ => self.fetch_page(&sel.link.locator)?,
        };
        Ok(ResourceDocument {
            source_kind: sel.kind,
            locator: sel.link.locator.clone(),
            expected_content: sel.link.expected_content.clone(),
            user_relevance: sel.link.user_relevance.clone(),
            priority: sel.link.priority,
            content_text,
            fetched_at: Utc::now(),
        })
    }

    fn fetch_page(&self, url: &str) -> Result<String> {
        let parsed =
            url::Url::parse(url).map_err(|e| Error::InvalidParams(format!("{url}: {e}")))?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(Error::InvalidParams(format!(
                "{url}: only http(s) pages can be fetched"
            )));
        }
        let req = HttpRequest::get(url)
            .header("user-agent", USER_AGENT)
            .header("accept", "text/html, text/plain;q=0.9, */*;q=0.5")
            .timeout(self.limits.fetch_timeout);
        let resp = self.connector.transport().send(&req)?;
        if !resp.is_success() {
            return Err(Error::HostResponse(format!(
                "{url}: status {}",
                resp.status
            )));
        }
        let is_html = resp
            .header("content-type")
            .map(|ct| ct.contains("html"))
            .unwrap_or_else(|| looks_like_html(&resp.body));
        Ok(if is_html {
            extract_visible_text(&resp.body)
        } else {
            resp.body
        })
    }

    /// Runs the fetch phase and assembles the corpus.
    pub fn build_corpus(
        &self,
        repo: &RepositoryRef,
        readme: Option<ResourceDocument>,
        plan: &LinkPlan,
        user_docs: Vec<ResourceDocument>,
    ) -> Result<CorpusBuild> {
        if readme.is_none() && user_docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let (fetched, warnings) = self.fetch_plan(repo, plan);
        let corpus = assemble(repo, readme, user_docs, fetched, &self.limits)?;
        Ok(CorpusBuild { corpus, warnings })
    }
}

/// Orders and caps documents: readme, then user documents, then fetched
/// links by descending priority. Each document keeps at most
/// `per_document` characters and the corpus at most `total`; anything
/// past the total is dropped.
pub fn assemble(
    repo: &RepositoryRef,
    readme: Option<ResourceDocument>,
    user_docs: Vec<ResourceDocument>,
    mut fetched: Vec<ResourceDocument>,
    limits: &CorpusLimits,
) -> Result<ResourceCorpus> {
    if readme.is_none() && user_docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    fetched.sort_by_key(|f| std::cmp::Reverse(f.priority));
    let mut documents = Vec::new();
    let mut total_chars = 0;
    let mut truncated = false;
    for mut doc in readme.into_iter().chain(user_docs).chain(fetched) {
        let room = limits.per_document.min(limits.total - total_chars);
        if room == 0 {
            truncated = true;
            continue;
        }
        let len = doc.content_text.chars().count();
        if len > room {
            doc.content_text = take_chars(&doc.content_text, room);
            truncated = true;
        }
        total_chars += len.min(room);
        documents.push(doc);
    }
    Ok(ResourceCorpus {
        repo: repo.clone(),
        documents,
        total_chars,
        truncated,
    })
}

fn take_chars(s: &str, n: usize) -> String {
    match s.char_indices().nth(n) {
        Some((at, _)) => s[..at].to_string(),
        None => s.to_string(),
    }
}

/// Wraps free-form user text as a document.
pub fn context_document(text: &str) -> ResourceDocument {
    ResourceDocument {
        source_kind: SourceKind::UserProvided,
        locator: "additional context".into(),
        expected_content: "context written by the user".into(),
        user_relevance: "supplied by the user as additional context".into(),
        priority: 5,
        content_text: text.to_string(),
        fetched_at: Utc::now(),
    }
}

fn looks_like_html(body: &str) -> bool {
    let head: String = body
        .chars()
        .take(512)
        .collect::<String>()
        .to_ascii_lowercase();
    head.contains("<html") || head.contains("<!doctype html") || head.contains("<body")
}

const SKIPPED: &[&str] = &[
    "script", "style", "noscript", "template", "svg", "iframe", "nav", "header", "footer", "aside",
    "form", "button", "select",
];

const BLOCKS: &[&str] = &[
    "p",
    "div",
    "section",
    "article",
    "main",
    "li",
    "ul",
    "ol",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "pre",
    "blockquote",
    "td",
    "th",
    "tr",
    "table",
    "dd",
    "dt",
    "figcaption",
    "title",
    "br",
    "hr",
];

#[derive(Default)]
struct Block {
    text: String,
    link_chars: usize,
}

/// Visible text of an HTML page. Markup, scripts, styles and navigation
/// chrome are dropped, as are blocks that are mostly link text (menus,
/// tag clouds, footers without a `<footer>` tag).
pub fn extract_visible_text(html: &str) -> String {
    let doc = Html::parse_document(html);
    let mut blocks = vec![Block::default()];
    walk(doc.root_element(), false, &mut blocks);
    let mut lines: Vec<String> = Vec::new();
    for b in blocks {
        let text = b.text.split_whitespace().collect::<Vec<_>>().join(" ");
        let chars = text.chars().count();
        if chars == 0 {
            continue;
        }
        let density = b.link_chars as f64 / chars as f64;
        if density > 0.5 {
            continue;
        }
        if lines.last() != Some(&text) {
            lines.push(text);
        }
    }
    lines.join("\n")
}

fn walk(el: ElementRef<'_>, in_link: bool, blocks: &mut Vec<Block>) {
    let name = el.value().name();
    if SKIPPED.contains(&name) {
        return;
    }
    let block = BLOCKS.contains(&name);
    if block {
        blocks.push(Block::default());
    }
    let in_link = in_link || name == "a";
    for child in el.children() {
        if let Some(text) = child.value().as_text() {
            let cur = blocks.last_mut().expect("at least one block");
            if !cur.text.is_empty() && !cur.text.ends_with(' ') {
                cur.text.push(' ');
            }
            cur.text.push_str(text);
            if in_link {
                cur.link_chars += text
                    .split_whitespace()
                    .map(|w| w.chars().count() + 1)
                    .sum::<usize>();
            }
        } else if let Some(child_el) = ElementRef::wrap(child) {
            walk(child_el, in_link, blocks);
        }
    }
    if block {
        blocks.push(Block::default());
    }
}
