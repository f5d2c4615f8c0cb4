//! Language-model access: prompt templates, pluggable providers, and the
//! append-only usage ledger that cost reporting is computed from.

mod cost;
mod playback;
mod remote;
mod scripted;
mod template;

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cost::{cost_report, per_agent_per_hour, to_human_hours, CostError, CostModel, CostReport, SiteCost};
pub use playback::{PlaybackEntry, PlaybackProvider, RecordingProvider};
pub use remote::{RemoteChatConfig, RemoteChatProvider};
pub use scripted::{RuleParseError, ScriptedProvider};
pub use template::{placeholders, substitute, Prompt, Template, TemplateSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LangError {
    #[error("provider timed out after {0:?}")]
    Timeout(Duration),
    #[error("prompt needs {tokens} tokens but the context limit is {limit}")]
    ContextOverflow { tokens: u64, limit: u64 },
    #[error("no scripted rule matches template `{template}`")]
    RuleMiss { template: String },
    #[error("template `{template}` is missing slot `{slot}`")]
    MissingSlot { template: String, slot: String },
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("playback exhausted after {0} completions")]
    Exhausted(usize),
    #[error("playback expected template `{expected}` but got `{found}`")]
    PlaybackMismatch { expected: String, found: String },
    #[error("provider unavailable: {0}")]
    Unavailable(String),
}

/// Where in the agent an LLM call originates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallSite {
    Controller,
    Talk,
    Reflect,
    Summary,
    Consolidate,
    Interview,
}

impl CallSite {
    pub const ALL: [CallSite; 6] = [
        CallSite::Controller,
        CallSite::Talk,
        CallSite::Reflect,
        CallSite::Summary,
        CallSite::Consolidate,
        CallSite::Interview,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CallSite::Controller => "controller",
            CallSite::Talk => "talk",
            CallSite::Reflect => "reflect",
            CallSite::Summary => "summary",
            CallSite::Consolidate => "consolidate",
            CallSite::Interview => "interview",
        }
    }
}

impl fmt::Display for CallSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CallSite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CallSite::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown call site `{s}`"))
    }
}

/// One LLM call as seen by the ledger. Never mutated after it is appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub agent_id: String,
    pub call_site: CallSite,
    pub tick: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_ms: u64,
    pub ok: bool,
}

/// Shared append-only record of every completion request.
#[derive(Debug, Clone, Default)]
pub struct UsageLedger {
    records: Arc<Mutex<Vec<UsageRecord>>>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, record: UsageRecord) {
        self.records.lock().expect("ledger lock").push(record);
    }

    pub fn snapshot(&self) -> Vec<UsageRecord> {
        self.records.lock().expect("ledger lock").clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("ledger lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, site: CallSite) -> usize {
        self.records
            .lock()
            .expect("ledger lock")
            .iter()
            .filter(|r| r.call_site == site)
            .count()
    }

    pub fn count_for(&self, agent: &str, site: CallSite) -> usize {
        self.records
            .lock()
            .expect("ledger lock")
            .iter()
            .filter(|r| r.call_site == site && r.agent_id == agent)
            .count()
    }
}

/// Token estimate used when the provider does not report counts:
/// whitespace words × 4/3, rounded to the nearest integer.
pub fn estimate_tokens(text: &str) -> u64 {
    let words = text.split_whitespace().count() as u64;
    (words * 4 + 1) / 3
}

/// What a provider sees for one call.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub template_id: &'a str,
    pub rendered: &'a str,
    pub prompt: &'a Prompt,
    pub agent_id: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub text: String,
    /// Server-reported counts override the estimator when present.
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

impl Generation {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            prompt_tokens: None,
            completion_tokens: None,
        }
    }
}

pub trait LanguageProvider: Send + Sync {
    fn name(&self) -> &str;
    /// Maximum prompt size in (estimated) tokens.
    fn context_limit(&self) -> u64 {
        8192
    }
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation, LangError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: UsageRecord,
}

/// Renders prompts, enforces the context limit, calls the provider and
/// appends exactly one [`UsageRecord`] per call.
#[derive(Clone)]
pub struct LlmClient {
    provider: Arc<dyn LanguageProvider>,
    templates: Arc<TemplateSet>,
    ledger: UsageLedger,
    measure_wall_time: bool,
}

impl LlmClient {
    pub fn new(provider: Arc<dyn LanguageProvider>, templates: TemplateSet, ledger: UsageLedger) -> Self {
        Self {
            provider,
            templates: Arc::new(templates),
            ledger,
            measure_wall_time: false,
        }
    }

    /// Record real elapsed milliseconds in the ledger. Off by default so
    /// deterministic runs produce identical ledgers.
    pub fn with_wall_time(mut self, on: bool) -> Self {
        self.measure_wall_time = on;
        self
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn render(&self, prompt: &Prompt) -> Result<String, LangError> {
        self.templates.render(prompt)
    }

    pub fn complete(&self, prompt: &Prompt, agent_id: &str, call_site: CallSite, tick: u64) -> Result<Completion, LangError> {
        let started = Instant::now();
        let mut record = UsageRecord {
            agent_id: agent_id.to_string(),
            call_site,
            tick,
            prompt_tokens: 0,
            completion_tokens: 0,
            wall_ms: 0,
            ok: false,
        };
        let result = self.call(prompt, agent_id, &mut record);
        if self.measure_wall_time {
            record.wall_ms = started.elapsed().as_millis() as u64;
        }
        record.ok = result.is_ok();
        self.ledger.append(record.clone());
        result.map(|text| Completion { text, usage: record })
    }

    fn call(&self, prompt: &Prompt, agent_id: &str, record: &mut UsageRecord) -> Result<String, LangError> {
        let rendered = self.templates.render(prompt)?;
        record.prompt_tokens = estimate_tokens(&rendered);
        let limit = self.provider.context_limit();
        if record.prompt_tokens > limit {
            return Err(LangError::ContextOverflow {
                tokens: record.prompt_tokens,
                limit,
            });
        }
        let generation = self.provider.generate(&GenerationRequest {
            template_id: &prompt.template_id,
            rendered: &rendered,
            prompt,
            agent_id,
        })?;
        if let Some(p) = generation.prompt_tokens {
            record.prompt_tokens = p;
        }
        record.completion_tokens = generation
            .completion_tokens
            .unwrap_or_else(|| estimate_tokens(&generation.text));
        Ok(generation.text)
    }
}

/// Wraps a provider and sleeps before each call, optionally only for one
/// template. Used to emulate slow backends.
pub struct DelayedProvider {
    inner: Arc<dyn LanguageProvider>,
    delay: Duration,
    only_template: Option<String>,
}

impl DelayedProvider {
    pub fn new(inner: Arc<dyn LanguageProvider>, delay: Duration) -> Self {
        Self {
            inner,
            delay,
            only_template: None,
        }
    }

    pub fn only_for(mut self, template_id: impl Into<String>) -> Self {
        self.only_template = Some(template_id.into());
        self
    }
}

impl LanguageProvider for DelayedProvider {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn context_limit(&self) -> u64 {
        self.inner.context_limit()
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation, LangError> {
        if self.only_template.as_deref().is_none_or(|t| t == request.template_id) {
            std::thread::sleep(self.delay);
        }
        self.inner.generate(request)
    }
}
