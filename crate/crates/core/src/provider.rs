//! Completion and image providers, plus the client that wraps them with
//! retries, JSON repair, a concurrency cap and the call ledger.
//!
//! Three text providers ship with the crate:
//!
//! * [`MockProvider`] replays fixture files keyed on the stage and a hash of
//!   the substituted prompt values, so runs are deterministic and offline.
//! * [`ScriptedProvider`] answers from a per-stage script and is used to
//!   record new fixtures.
//! * [`ChatProvider`] speaks the OpenAI-compatible chat-completions protocol
//!   over any [`HttpTransport`].
//!
//! [`ChatImageProvider`] is the matching live headshot generator.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::http::{HttpRequest, HttpTransport};
use crate::prompts::{PromptBundle, Stage};

/// Default number of requests one provider serves at a time.
pub const DEFAULT_CONCURRENCY: usize = 4;

/// Attempts per completion when the transport fails (one retry).
pub const TRANSPORT_ATTEMPTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Completion {
    /// Builds a completion with token counts estimated at four characters
    /// per token, for providers that do not report usage.
    pub fn estimated(bundle: &PromptBundle, text: impl Into<String>) -> Self {
        let text = text.into();
        Completion {
            input_tokens: estimate_tokens(&bundle.system_text) + estimate_tokens(&bundle.user_text),
            output_tokens: estimate_tokens(&text),
            text,
        }
    }
}

fn estimate_tokens(s: &str) -> u64 {
    (s.chars().count() as u64).div_ceil(4)
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, bundle: &PromptBundle) -> Result<Completion>;
}

/// Produces a headshot for a rendered headshot prompt and returns where the
/// image can be found.
pub trait ImageProvider: Send + Sync {
    fn generate(&self, bundle: &PromptBundle) -> Result<String>;
}

// ---------------------------------------------------------------------------
// fixture replay

/// One recorded response. Stored as `<stage>-<key>.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    pub stage: Stage,
    pub key: String,
    pub response_text: String,
}

#[derive(Debug, Default)]
pub struct MockProvider {
    fixtures: HashMap<(Stage, String), String>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every `*.json` fixture in `dir`. A missing directory yields an
    /// empty provider.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut p = Self::default();
        if !dir.exists() {
            return Ok(p);
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let text = fs::read_to_string(&path)?;
            let f: Fixture = serde_json::from_str(&text)
                .map_err(|e| Error::Storage(format!("{}: {e}", path.display())))?;
            p.insert(f);
        }
        Ok(p)
    }

    pub fn insert(&mut self, fixture: Fixture) {
        self.fixtures
            .insert((fixture.stage, fixture.key), fixture.response_text);
    }

    /// Registers `response` for exactly this prompt.
    pub fn respond(&mut self, bundle: &PromptBundle, response: impl Into<String>) {
        self.insert(Fixture {
            stage: bundle.stage,
            key: bundle.fixture_key(),
            response_text: response.into(),
        });
    }

    pub fn into_fixtures(self) -> Vec<Fixture> {
        self.fixtures
            .into_iter()
            .map(|((stage, key), response_text)| Fixture {
                stage,
                key,
                response_text,
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<Completion> {
        let key = bundle.fixture_key();
        match self.fixtures.get(&(bundle.stage, key.clone())) {
            Some(text) => Ok(Completion::estimated(bundle, text.clone())),
            None => Err(Error::Provider(format!(
                "no fixture for {} key {key}",
                bundle.stage
            ))),
        }
    }
}

/// Writes `fixture` into `dir` using the canonical file name.
pub fn write_fixture(dir: &Path, fixture: &Fixture) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}-{}.json", fixture.stage, fixture.key));
    let text = serde_json::to_string_pretty(fixture).map_err(|e| Error::Storage(e.to_string()))?;
    fs::write(&path, text + "\n")?;
    Ok(path)
}

/// Answers from a script: one response per stage, with issue-mapping
/// responses looked up by the issue title embedded in the prompt. Every
/// answered prompt is kept so it can be saved as a fixture.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    by_stage: BTreeMap<Stage, String>,
    by_issue_title: BTreeMap<String, String>,
    answered: Mutex<Vec<Fixture>>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stage(mut self, stage: Stage, response: impl Into<String>) -> Self {
        self.by_stage.insert(stage, response.into());
        self
    }

    pub fn issue(mut self, title: impl Into<String>, response: impl Into<String>) -> Self {
        self.by_issue_title.insert(title.into(), response.into());
        self
    }

    /// Fixtures for every prompt answered so far.
    pub fn answered(&self) -> Vec<Fixture> {
        self.answered.lock().unwrap().clone()
    }
}

impl Provider for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<Completion> {
        let text = if bundle.stage == Stage::IssueMapping {
            let issue = bundle
                .context
                .get("issue")
                .map(String::as_str)
                .unwrap_or("");
            let title = issue
                .lines()
                .next()
                .and_then(|l| l.strip_prefix("Title: "))
                .unwrap_or("");
            self.by_issue_title.get(title).cloned()
        } else {
            self.by_stage.get(&bundle.stage).cloned()
        };
        let text = text.ok_or_else(|| {
            Error::Provider(format!("script has no response for {}", bundle.stage))
        })?;
        self.answered.lock().unwrap().push(Fixture {
            stage: bundle.stage,
            key: bundle.fixture_key(),
            response_text: text.clone(),
        });
        Ok(Completion::estimated(bundle, text))
    }
}

// ---------------------------------------------------------------------------
// live chat provider

#[derive(Debug, Clone)]
pub struct ChatConfig {
    /// Base URL up to and including the API version, e.g.
    /// `https://api.openai.com/v1`.
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
}

impl ChatConfig {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        ChatConfig {
            base_url: base_url.into(),
            api_key: api_key.into(),
            model: model.into(),
            temperature: 0.2,
            timeout: Duration::from_secs(120),
        }
    }
}

pub struct ChatProvider {
    transport: Arc<dyn HttpTransport>,
    config: ChatConfig,
}

impl ChatProvider {
    pub fn new(transport: Arc<dyn HttpTransport>, config: ChatConfig) -> Self {
        ChatProvider { transport, config }
    }
}

impl Provider for ChatProvider {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<Completion> {
        let mut messages = Vec::new();
        if !bundle.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": bundle.system_text}));
        }
        messages.push(json!({"role": "user", "content": bundle.user_text}));
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": messages,
        });
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let req = HttpRequest::post_json(url, body.to_string())
            .header("authorization", format!("Bearer {}", self.config.api_key))
            .timeout(self.config.timeout);
        let resp = self.transport.send(&req)?;
        if !resp.is_success() {
            let msg = format!("completion endpoint returned {}", resp.status);
            return Err(if resp.status >= 500 || resp.status == 429 {
                Error::Transport(msg)
            } else {
                Error::Provider(msg)
            });
        }
        let v: Value = serde_json::from_str(&resp.body)
            .map_err(|e| Error::Provider(format!("completion response is not JSON: {e}")))?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| Error::Provider("completion response has no message content".into()))?
            .to_string();
        let mut c = Completion::estimated(bundle, text);
        if let Some(n) = v["usage"]["prompt_tokens"].as_u64() {
            c.input_tokens = n;
        }
        if let Some(n) = v["usage"]["completion_tokens"].as_u64() {
            c.output_tokens = n;
        }
        Ok(c)
    }
}

// ---------------------------------------------------------------------------
// image providers

/// Deterministic stand-in that "generates" an image locator from the prompt
/// hash without producing pixels.
#[derive(Debug, Default, Clone, Copy)]
pub struct StubImageProvider;

impl ImageProvider for StubImageProvider {
    fn generate(&self, bundle: &PromptBundle) -> Result<String> {
        Ok(format!("generated://headshot/{}.png", bundle.fixture_key()))
    }
}

/// Speaks the OpenAI-compatible image-generation protocol and returns the
/// hosted image URL. `config.model` names the image model.
pub struct ChatImageProvider {
    transport: Arc<dyn HttpTransport>,
    config: ChatConfig,
    size: String,
}

impl ChatImageProvider {
    pub fn new(transport: Arc<dyn HttpTransport>, config: ChatConfig) -> Self {
        ChatImageProvider {
            transport,
            config,
            size: "1024x1024".into(),
        }
    }
}

impl ImageProvider for ChatImageProvider {
    fn generate(&self, bundle: &PromptBundle) -> Result<String> {
        let body = json!({
            "model": self.config.model,
            "prompt": bundle.user_text,
            "size": self.size,
            "n": 1,
        });
        let url = format!(
            "{}/images/generations",
            self.config.base_url.trim_end_matches('/')
        );
        let req = HttpRequest::post_json(url, body.to_string())
            .header("authorization", format!("Bearer {}", self.config.api_key))
            .timeout(self.config.timeout);
        let resp = self.transport.send(&req)?;
        if !resp.is_success() {
            return Err(Error::Provider(format!(
                "image endpoint returned {}",
                resp.status
            )));
        }
        let v: Value = serde_json::from_str(&resp.body)
            .map_err(|e| Error::Provider(format!("image response is not JSON: {e}")))?;
        v["data"][0]["url"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Provider("image response has no url".into()))
    }
}

/// Always fails; exercises the avatar fallback.
#[derive(Debug, Default, Clone, Copy)]
pub struct FailingImageProvider;

impl ImageProvider for FailingImageProvider {
    fn generate(&self, _bundle: &PromptBundle) -> Result<String> {
        Err(Error::Provider("image generation unavailable".into()))
    }
}

// ---------------------------------------------------------------------------
// accounting

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Text,
    Image,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub input: u64,
    pub output: u64,
}

/// One provider request, successful or not. Retries and repair re-asks are
/// separate entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderCall {
    pub job_id: Option<String>,
    pub stage: Stage,
    pub kind: CallKind,
    pub token_counts: TokenCounts,
    pub succeeded: bool,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Per-token and per-image prices used to turn the ledger into a cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    pub input_per_token: f64,
    pub output_per_token: f64,
    pub per_image: f64,
}

#[derive(Debug, Default)]
pub struct CallLedger {
    calls: Mutex<Vec<ProviderCall>>,
}

impl CallLedger {
    pub fn record(&self, call: ProviderCall) {
        self.calls.lock().unwrap().push(call);
    }

    pub fn calls(&self) -> Vec<ProviderCall> {
        self.calls.lock().unwrap().clone()
    }

    pub fn for_job(&self, job_id: &str) -> Vec<ProviderCall> {
        self.calls
            .lock()
            .unwrap()
            .iter()
            .filter(|c| c.job_id.as_deref() == Some(job_id))
            .cloned()
            .collect()
    }

    pub fn count(&self, kind: CallKind) -> usize {
        self.calls
            .lock()
            .unwrap()
            .iter()
            .filter(|c| c.kind == kind)
            .count()
    }

    pub fn cost(&self, pricing: &Pricing) -> f64 {
        cost_of(&self.calls.lock().unwrap(), pricing)
    }
}

pub fn cost_of(calls: &[ProviderCall], pricing: &Pricing) -> f64 {
    calls
        .iter()
        .map(|c| match c.kind {
            CallKind::Text => {
                c.token_counts.input as f64 * pricing.input_per_token
                    + c.token_counts.output as f64 * pricing.output_per_token
            }
            CallKind::Image => pricing.per_image,
        })
        .sum()
}

// ---------------------------------------------------------------------------
// client

#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

/// Shared handle the engines use to reach the providers. Cloning is cheap;
/// [`LlmClient::for_job`] returns a copy whose calls are attributed to a job.
#[derive(Clone)]
pub struct LlmClient {
    text: Option<Arc<dyn Provider>>,
    image: Option<Arc<dyn ImageProvider>>,
    ledger: Arc<CallLedger>,
    gate: Arc<Semaphore>,
    job_id: Option<String>,
}

impl LlmClient {
    /// `text = None` selects offline mode: generation is unavailable and
    /// issue mapping falls back to the rubric scorer.
    pub fn new(text: Option<Arc<dyn Provider>>) -> Self {
        LlmClient {
            text,
            image: None,
            ledger: Arc::new(CallLedger::default()),
            gate: Arc::new(Semaphore::new(DEFAULT_CONCURRENCY)),
            job_id: None,
        }
    }

    pub fn offline() -> Self {
        Self::new(None)
    }

    pub fn with_images(mut self, image: Arc<dyn ImageProvider>) -> Self {
        self.image = Some(image);
        self
    }

    pub fn with_concurrency(mut self, permits: usize) -> Self {
        self.gate = Arc::new(Semaphore::new(permits));
        self
    }

    pub fn for_job(&self, job_id: &str) -> Self {
        let mut c = self.clone();
        c.job_id = Some(job_id.to_string());
        c
    }

    pub fn ledger(&self) -> &Arc<CallLedger> {
        &self.ledger
    }

    pub fn has_text_provider(&self) -> bool {
        self.text.is_some()
    }

    pub fn images_enabled(&self) -> bool {
        self.image.is_some()
    }

    /// Sends `bundle` to the text provider, retrying once on transport
    /// failure. Every attempt is recorded.
    pub fn complete(&self, bundle: &PromptBundle) -> Result<String> {
        let provider = self
            .text
            .as_ref()
            .ok_or_else(|| Error::Provider("no completion provider configured".into()))?;
        let mut last = None;
        for _ in 0..TRANSPORT_ATTEMPTS {
            let started = Instant::now();
            let outcome = {
                let _permit = self.gate.acquire();
                provider.complete(bundle)
            };
            let latency = started.elapsed();
            match outcome {
                Ok(c) => {
                    self.record(
                        bundle.stage,
                        CallKind::Text,
                        c.input_tokens,
                        c.output_tokens,
                        true,
                        latency,
                    );
                    return Ok(c.text);
                }
                Err(e) => {
                    let input = Completion::estimated(bundle, "").input_tokens;
                    self.record(bundle.stage, CallKind::Text, input, 0, false, latency);
                    let retry = matches!(e, Error::Transport(_));
                    last = Some(e);
                    if !retry {
                        break;
                    }
                }
            }
        }
        Err(match last {
            Some(Error::Transport(m)) => {
                Error::Provider(format!("{m} (gave up after {TRANSPORT_ATTEMPTS} attempts)"))
            }
            Some(e) => e,
            None => Error::Provider("no attempt made".into()),
        })
    }

    /// Completes and parses. A parse failure triggers one re-ask with the
    /// repair instruction appended; a second failure is returned.
    pub fn complete_parsed<T>(
        &self,
        bundle: &PromptBundle,
        parse: impl Fn(&str) -> Result<T>,
    ) -> Result<T> {
        let raw = self.complete(bundle)?;
        match parse(&raw) {
            Ok(v) => Ok(v),
            Err(Error::Parse { stage, message }) => {
                tracing::warn!(%stage, %message, "unparseable output, asking once more");
                let raw = self.complete(&bundle.repaired())?;
                parse(&raw)
            }
            Err(e) => Err(e),
        }
    }

    /// One image call. `None` when image generation is disabled.
    pub fn generate_image(&self, bundle: &PromptBundle) -> Option<Result<String>> {
        let provider = self.image.as_ref()?;
        let started = Instant::now();
        let out = {
            let _permit = self.gate.acquire();
            provider.generate(bundle)
        };
        let input = Completion::estimated(bundle, "").input_tokens;
        self.record(
            bundle.stage,
            CallKind::Image,
            input,
            0,
            out.is_ok(),
            started.elapsed(),
        );
        Some(out)
    }

    fn record(
        &self,
        stage: Stage,
        kind: CallKind,
        input: u64,
        output: u64,
        ok: bool,
        latency: Duration,
    ) {
        self.ledger.record(ProviderCall {
            job_id: self.job_id.clone(),
            stage,
            kind,
            token_counts: TokenCounts { input, output },
            succeeded: ok,
            latency,
        });
    }
}
