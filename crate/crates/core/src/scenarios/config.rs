//! `scenario v1` configuration files.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::agent::BrainConfig;
use crate::embedding::{CachedEmbedder, EmbeddingProvider, HashedBagOfTokens, HttpEmbeddingProvider};
use crate::lang::{CostModel, LanguageProvider, PlaybackProvider, RemoteChatConfig, RemoteChatProvider, ScriptedProvider};

pub const SCENARIO_FORMAT: &str = "scenario v1";

/// Shipped scenarios, by name.
pub const BUILTIN_SCENARIOS: [&str; 5] = ["murder_mystery", "murder_mystery_hard", "activity_fair", "medicine", "conversation"];

fn builtin_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("scenarios")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LangProviderKind {
    Scripted,
    Playback,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangSection {
    pub provider: LangProviderKind,
    /// Rules file for `scripted`, relative to the config file.
    #[serde(default)]
    pub rules: Option<String>,
    /// Recording for `playback`.
    #[serde(default)]
    pub recording: Option<String>,
    #[serde(default)]
    pub remote: Option<RemoteChatConfig>,
    #[serde(default)]
    pub context_limit: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingProviderKind {
    Hashed,
    Http,
}

fn default_dimension() -> usize {
    256
}

fn default_embed_timeout() -> u64 {
    10_000
}

fn default_embed_retries() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    pub provider: EmbeddingProviderKind,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_embed_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_embed_retries")]
    pub retries: u32,
    /// Cache file for remote vectors, relative to the config file.
    #[serde(default)]
    pub cache: Option<String>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            provider: EmbeddingProviderKind::Hashed,
            dimension: default_dimension(),
            endpoint: None,
            timeout_ms: default_embed_timeout(),
            retries: default_embed_retries(),
            cache: None,
        }
    }
}

fn default_game_speed() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(default = "CostSection::default_prompt")]
    pub price_per_1k_prompt_tokens: f64,
    #[serde(default = "CostSection::default_completion")]
    pub price_per_1k_completion_tokens: f64,
    /// Game time per human time.
    #[serde(default = "default_game_speed")]
    pub game_speed: f64,
}

impl CostSection {
    fn default_prompt() -> f64 {
        CostModel::default().price_per_1k_prompt_tokens
    }

    fn default_completion() -> f64 {
        CostModel::default().price_per_1k_completion_tokens
    }

    pub fn model(&self) -> Result<CostModel, ScenarioError> {
        CostModel::new(self.price_per_1k_prompt_tokens, self.price_per_1k_completion_tokens)
            .map_err(|e| ScenarioError::invalid("cost", e.to_string()))
    }
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            price_per_1k_prompt_tokens: Self::default_prompt(),
            price_per_1k_completion_tokens: Self::default_completion(),
            game_speed: default_game_speed(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    pub no_option_action: bool,
    pub no_self_monitor: bool,
    pub flat_memory: bool,
}

impl Ablations {
    pub fn any(&self) -> bool {
        self.no_option_action || self.no_self_monitor || self.flat_memory
    }

    /// Turns the brain config into its ablated form.
    pub fn apply(&self, config: &BrainConfig) -> BrainConfig {
        let mut c = config.clone();
        if self.no_option_action {
            c.option_action = false;
        }
        if self.no_self_monitor {
            c.self_monitor = false;
        }
        if self.flat_memory {
            c.memory.flat = true;
        }
        c
    }

    pub fn labels(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.no_option_action {
            out.push("no_option_action");
        }
        if self.no_self_monitor {
            out.push("no_self_monitor");
        }
        if self.flat_memory {
            out.push("flat_memory");
        }
        out
    }

    pub fn set(&mut self, label: &str) -> Result<(), ScenarioError> {
        match label {
            "no_option_action" => self.no_option_action = true,
            "no_self_monitor" => self.no_self_monitor = true,
            "flat_memory" => self.flat_memory = true,
            other => return Err(ScenarioError::invalid("ablations", format!("unknown ablation `{other}`"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub name: String,
    pub persona: String,
    pub goal: String,
    pub spawn: String,
    #[serde(default)]
    pub recent_memories: Vec<String>,
    #[serde(default)]
    pub long_term_memories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyFact {
    pub id: String,
    pub text: String,
    /// Every keyword must occur (case-insensitive) for a text to carry the fact.
    pub keywords: Vec<String>,
    /// Agent that starts out knowing the fact.
    #[serde(default)]
    pub source: Option<String>,
}

impl KeyFact {
    pub fn detect(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.keywords.iter().all(|k| lower.contains(&k.to_lowercase()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub name: String,
    /// Any one of these marks an answer as naming the category.
    pub keywords: Vec<String>,
}

fn default_repeats() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterviewSpec {
    pub agent: String,
    pub questions: Vec<String>,
    #[serde(default)]
    pub categories: Vec<Category>,
    /// Category counted as a success by [`super::success_rate`].
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptLine {
    pub tick: u64,
    pub text: String,
}

/// A human whose lines are replayed from the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanSpec {
    pub id: String,
    pub spawn: String,
    #[serde(default)]
    pub lines: Vec<ScriptLine>,
}

fn default_map() -> String {
    "sakuramachi".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: String,
    pub name: String,
    #[serde(default = "default_map")]
    pub map: String,
    pub duration_ticks: u64,
    /// Spawn offset in meters, drawn from the run seed.
    #[serde(default)]
    pub spawn_jitter: f64,
    pub lang: LangSection,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub brain: BrainConfig,
    #[serde(default)]
    pub ablations: Ablations,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub key_facts: Vec<KeyFact>,
    #[serde(default)]
    pub interviews: Vec<InterviewSpec>,
    #[serde(default)]
    pub humans: Vec<HumanSpec>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn parse(source: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ScenarioError> {
        let mut config: ScenarioConfig = toml::from_str(source).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        config.base_dir = base_dir.into();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn builtin(name: &str) -> Result<Self, ScenarioError> {
        if !BUILTIN_SCENARIOS.contains(&name) {
            return Err(ScenarioError::invalid("name", format!("no builtin scenario `{name}`")));
        }
        Self::load(builtin_dir().join(format!("{name}.toml")))
    }

    /// A builtin name or a path to a config file.
    pub fn resolve(reference: &str) -> Result<Self, ScenarioError> {
        if BUILTIN_SCENARIOS.contains(&reference) {
            Self::builtin(reference)
        } else {
            Self::load(reference)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serializable config")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCENARIO_FORMAT {
            return Err(ScenarioError::invalid("version", format!("expected `{SCENARIO_FORMAT}`, got `{}`", self.version)));
        }
        if self.name.trim().is_empty() {
            return Err(ScenarioError::invalid("name", "must not be empty"));
        }
        if !(self.spawn_jitter >= 0.0 && self.spawn_jitter.is_finite()) {
            return Err(ScenarioError::invalid("spawn_jitter", "must be a non-negative number"));
        }
        if self.agents.is_empty() {
            return Err(ScenarioError::invalid("agents", "at least one agent is required"));
        }
        let mut names = BTreeSet::new();
        for (i, a) in self.agents.iter().enumerate() {
            if a.name.trim().is_empty() {
                return Err(ScenarioError::invalid(format!("agents[{i}].name"), "must not be empty"));
            }
            if !names.insert(a.name.as_str()) {
                return Err(ScenarioError::invalid(format!("agents[{i}].name"), format!("duplicate agent `{}`", a.name)));
            }
            if a.goal.trim().is_empty() {
                return Err(ScenarioError::invalid(format!("agents[{i}].goal"), "must not be empty"));
            }
        }
        for (i, h) in self.humans.iter().enumerate() {
            if !names.insert(h.id.as_str()) {
                return Err(ScenarioError::invalid(format!("humans[{i}].id"), format!("duplicate body `{}`", h.id)));
            }
        }
        let mut facts = BTreeSet::new();
        for (i, f) in self.key_facts.iter().enumerate() {
            if !facts.insert(f.id.as_str()) {
                return Err(ScenarioError::invalid(format!("key_facts[{i}].id"), format!("duplicate fact `{}`", f.id)));
            }
            if f.keywords.iter().all(|k| k.trim().is_empty()) {
                return Err(ScenarioError::invalid(format!("key_facts[{i}].keywords"), "at least one keyword is required"));
            }
            if let Some(s) = &f.source {
                if !names.contains(s.as_str()) {
                    return Err(ScenarioError::invalid(format!("key_facts[{i}].source"), format!("unknown agent `{s}`")));
                }
            }
        }
        for (i, iv) in self.interviews.iter().enumerate() {
            if !self.agents.iter().any(|a| a.name == iv.agent) {
                return Err(ScenarioError::invalid(format!("interviews[{i}].agent"), format!("unknown agent `{}`", iv.agent)));
            }
            if iv.questions.is_empty() {
                return Err(ScenarioError::invalid(format!("interviews[{i}].questions"), "at least one question is required"));
            }
            if iv.repeats == 0 {
                return Err(ScenarioError::invalid(format!("interviews[{i}].repeats"), "must be positive"));
            }
            if let Some(t) = &iv.target {
                if !iv.categories.iter().any(|c| &c.name == t) {
                    return Err(ScenarioError::invalid(format!("interviews[{i}].target"), format!("`{t}` is not a category")));
                }
            }
        }
        match self.lang.provider {
            LangProviderKind::Scripted if self.lang.rules.is_none() => {
                return Err(ScenarioError::invalid("lang.rules", "required for the scripted provider"));
            }
            LangProviderKind::Playback if self.lang.recording.is_none() => {
                return Err(ScenarioError::invalid("lang.recording", "required for the playback provider"));
            }
            LangProviderKind::Remote if self.lang.remote.is_none() => {
                return Err(ScenarioError::invalid("lang.remote", "required for the remote provider"));
            }
            _ => {}
        }
        if self.embedding.provider == EmbeddingProviderKind::Http && self.embedding.endpoint.is_none() {
            return Err(ScenarioError::invalid("embedding.endpoint", "required for the http provider"));
        }
        if self.embedding.dimension == 0 {
            return Err(ScenarioError::invalid("embedding.dimension", "must be positive"));
        }
        if !(self.cost.game_speed > 0.0) {
            return Err(ScenarioError::invalid("cost.game_speed", "must be positive"));
        }
        self.cost.model()?;
        self.brain
            .memory
            .validate()
            .map_err(|e| ScenarioError::invalid("brain.memory", e.to_string()))?;
        Ok(())
    }

    pub fn resolve_path(&self, relative: &str) -> PathBuf {
        let p = Path::new(relative);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn agent(&self, name: &str) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.name == name)
    }

    pub fn key_fact(&self, id: &str) -> Option<&KeyFact> {
        self.key_facts.iter().find(|f| f.id == id)
    }

    /// The brain config every agent gets, with ablations applied.
    pub fn brain_config(&self) -> BrainConfig {
        self.ablations.apply(&self.brain)
    }

    pub fn build_language_provider(&self) -> Result<Arc<dyn LanguageProvider>, ScenarioError> {
        Ok(match self.lang.provider {
            LangProviderKind::Scripted => {
                let path = self.resolve_path(self.lang.rules.as_deref().unwrap_or_default());
                let mut p = ScriptedProvider::load(&path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
                if let Some(limit) = self.lang.context_limit {
                    p = p.with_context_limit(limit);
                }
                Arc::new(p)
            }
            LangProviderKind::Playback => {
                let path = self.resolve_path(self.lang.recording.as_deref().unwrap_or_default());
                Arc::new(PlaybackProvider::load(&path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?)
            }
            LangProviderKind::Remote => Arc::new(RemoteChatProvider::new(self.lang.remote.clone().unwrap_or_else(|| unreachable!()))),
        })
    }

    pub fn build_embedder(&self) -> Result<Arc<dyn EmbeddingProvider>, ScenarioError> {
        let e = &self.embedding;
        Ok(match e.provider {
            EmbeddingProviderKind::Hashed => Arc::new(HashedBagOfTokens::new(e.dimension)),
            EmbeddingProviderKind::Http => {
                let http = HttpEmbeddingProvider::new(
                    "http",
                    e.endpoint.clone().unwrap_or_default(),
                    e.dimension,
                    Duration::from_millis(e.timeout_ms),
                    e.retries,
                );
                match &e.cache {
                    Some(c) => Arc::new(CachedEmbedder::persistent(http, self.resolve_path(c)).map_err(|e| ScenarioError::Io(e.to_string()))?),
                    None => Arc::new(CachedEmbedder::in_memory(http)),
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"
version = "scenario v1"
name = "tiny"
duration_ticks = 10
[lang]
provider = "scripted"
rules = "tiny.rules"
[[agents]]
name = "A"
persona = "a person"
goal = "chat"
spawn = "hotel"
"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ScenarioConfig::parse(&minimal(), ".").unwrap();
        assert_eq!(c.map, "sakuramachi");
        assert_eq!(c.brain, BrainConfig::default());
        assert_eq!(c.embedding.dimension, 256);
        assert!(!c.ablations.any());
    }

    #[test]
    fn duplicate_agent_names_are_rejected() {
        let src = minimal() + "[[agents]]\nname = \"A\"\npersona = \"x\"\ngoal = \"y\"\nspawn = \"hotel\"\n";
        let err = ScenarioConfig::parse(&src, ".").unwrap_err();
        assert!(err.to_string().contains("agents[1].name"), "{err}");
    }

    #[test]
    fn validation_names_the_field() {
        let src = minimal() + "[[key_facts]]\nid = \"k\"\ntext = \"t\"\nkeywords = []\n";
        assert!(ScenarioConfig::parse(&src, ".").unwrap_err().to_string().contains("key_facts[0].keywords"));
        let src = minimal() + "[[interviews]]\nagent = \"Nobody\"\nquestions = [\"q\"]\n";
        assert!(ScenarioConfig::parse(&src, ".").unwrap_err().to_string().contains("interviews[0].agent"));
        let src = minimal().replace("scenario v1", "scenario v0");
        assert!(ScenarioConfig::parse(&src, ".").unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn ablations_modify_brain_config() {
        let mut a = Ablations::default();
        a.set("no_option_action").unwrap();
        a.set("flat_memory").unwrap();
        assert!(a.set("no_brain").is_err());
        let c = a.apply(&BrainConfig::default());
        assert!(!c.option_action && c.self_monitor && c.memory.flat);
        assert_eq!(a.labels(), ["no_option_action", "flat_memory"]);
    }

    #[test]
    fn keyword_detection_is_conjunctive() {
        let f = KeyFact {
            id: "knife".into(),
            text: "t".into(),
            keywords: vec!["bloody knife".into(), "francesco".into()],
            source: None,
        };
        assert!(f.detect("I saw Francesco with a Bloody Knife"));
        assert!(!f.detect("I saw a bloody knife"));
    }
}
