//! Deterministic scenario runs and the run directory.
//!
//! ```text
//! <run-dir>/
//!   config/scenario.toml
//!   logs/<agent>.log        agent events, JSON lines
//!   world.log               world events, JSON lines
//!   memdump/<agent>.memdump
//!   usage.jsonl             one line per LLM call
//!   interviews.jsonl
//!   run.json                metadata and content hash
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Ablations, InterviewSpec, ScenarioConfig};
use super::interview::{classify_answer, interview, InterviewRecord, Phase};
use super::ScenarioError;
use crate::agent::{AgentBrain, AgentEvent, Persona};
use crate::embedding::EmbeddingProvider;
use crate::lang::{cost_report, CostReport, Generation, GenerationRequest, LangError, LanguageProvider, LlmClient, TemplateSet, UsageLedger, UsageRecord};
use crate::memory::{read_memdump, write_memdump, MemdumpRecord};
use crate::world::{events_to_jsonl, Mode, Point, World, WorldEvent, WorldMap};

pub struct Providers {
    pub language: Arc<dyn LanguageProvider>,
    pub embedder: Arc<dyn EmbeddingProvider>,
}

impl Providers {
    pub fn from_config(config: &ScenarioConfig) -> Result<Self, ScenarioError> {
        Ok(Self {
            language: config.build_language_provider()?,
            embedder: config.build_embedder()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: u64,
    /// Interview the seeded agents before the simulation starts.
    pub pre_interviews: bool,
    /// Interview agents restored from the final memdumps.
    pub post_interviews: bool,
}

impl RunOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            pre_interviews: false,
            post_interviews: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentLog {
    pub agent: String,
    pub events: Vec<AgentEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub scenario: String,
    pub seed: u64,
    pub ablations: Vec<String>,
    pub agents: Vec<String>,
    pub duration_ticks: u64,
    pub ticks_run: u64,
    pub tick_seconds: f64,
    #[serde(default)]
    pub aborted: Option<String>,
    pub hash: String,
}

/// Everything a run produced. Immutable once returned.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub ticks_run: u64,
    pub tick_seconds: f64,
    pub aborted: Option<String>,
    pub agents: Vec<AgentLog>,
    pub world: Vec<WorldEvent>,
    pub usage: Vec<UsageRecord>,
    /// (agent, memdump text) in agent order.
    pub memdumps: Vec<(String, String)>,
    pub interviews: Vec<InterviewRecord>,
}

/// File-name form of an agent name.
pub fn file_stem(agent: &str) -> String {
    agent.chars().map(|c| if c.is_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

impl RunLog {
    pub fn completed(&self) -> bool {
        self.aborted.is_none()
    }

    pub fn ablations(&self) -> Ablations {
        self.config.ablations
    }

    pub fn agent_log(&self, agent: &str) -> Option<&AgentLog> {
        self.agents.iter().find(|a| a.agent == agent)
    }

    /// Texts of every item in the agent's final memdump.
    pub fn memdump(&self, agent: &str) -> Option<Vec<String>> {
        let (_, text) = self.memdumps.iter().find(|(a, _)| a == agent)?;
        Some(
            text.lines()
                .skip(1)
                .filter_map(|l| serde_json::from_str::<MemdumpRecord>(l).ok())
                .map(|r| r.text)
                .collect(),
        )
    }

    pub fn game_hours(&self) -> f64 {
        self.ticks_run as f64 * self.tick_seconds / 3600.0
    }

    pub fn cost(&self) -> Result<CostReport, ScenarioError> {
        let model = self.config.cost.model()?;
        // zero-length runs are reported over one tick to avoid dividing by zero
        let hours = self.game_hours().max(self.tick_seconds / 3600.0);
        cost_report(&self.usage, &model, hours, self.agents.len() as u64).map_err(|e| ScenarioError::invalid("cost", e.to_string()))
    }

    /// Relative path and content of every file except `run.json`, in a
    /// fixed order.
    pub fn files(&self) -> Vec<(PathBuf, String)> {
        let mut out = vec![(PathBuf::from("config/scenario.toml"), portable_config(&self.config).to_toml())];
        for a in &self.agents {
            out.push((PathBuf::from(format!("logs/{}.log", file_stem(&a.agent))), events_to_jsonl(&a.events)));
        }
        out.push((PathBuf::from("world.log"), events_to_jsonl(&self.world)));
        for (agent, dump) in &self.memdumps {
            out.push((PathBuf::from(format!("memdump/{}.memdump", file_stem(agent))), dump.clone()));
        }
        out.push((PathBuf::from("usage.jsonl"), events_to_jsonl(&self.usage)));
        out.push((PathBuf::from("interviews.jsonl"), events_to_jsonl(&self.interviews)));
        out
    }

    /// SHA-256 over every file's path and content.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (path, content) in self.files() {
            h.update(path.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(content.as_bytes());
            h.update([0]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn meta(&self) -> RunMeta {
        RunMeta {
            scenario: self.config.name.clone(),
            seed: self.seed,
            ablations: self.config.ablations.labels().into_iter().map(str::to_string).collect(),
            agents: self.agents.iter().map(|a| a.agent.clone()).collect(),
            duration_ticks: self.config.duration_ticks,
            ticks_run: self.ticks_run,
            tick_seconds: self.tick_seconds,
            aborted: self.aborted.clone(),
            hash: self.hash(),
        }
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), ScenarioError> {
        let dir = dir.as_ref();
        for (rel, content) in self.files() {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io(parent))?;
            }
            fs::write(&path, content).map_err(io(&path))?;
        }
        let meta = serde_json::to_string_pretty(&self.meta()).expect("serializable meta");
        let path = dir.join("run.json");
        fs::write(&path, meta + "\n").map_err(io(&path))
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let dir = dir.as_ref();
        let read = |rel: &str| -> Result<String, ScenarioError> {
            let p = dir.join(rel);
            fs::read_to_string(&p).map_err(io(&p))
        };
        let meta: RunMeta = serde_json::from_str(&read("run.json")?).map_err(|e| ScenarioError::Parse(format!("run.json: {e}")))?;
        let config = ScenarioConfig::parse(&read("config/scenario.toml")?, dir.join("config"))?;
        let mut agents = Vec::new();
        let mut memdumps = Vec::new();
        for name in &meta.agents {
            let stem = file_stem(name);
            agents.push(AgentLog {
                agent: name.clone(),
                events: parse_jsonl(&read(&format!("logs/{stem}.log"))?, "agent log")?,
            });
            let dump = format!("memdump/{stem}.memdump");
            if dir.join(&dump).exists() {
                memdumps.push((name.clone(), read(&dump)?));
            }
        }
        Ok(Self {
            config,
            seed: meta.seed,
            ticks_run: meta.ticks_run,
            tick_seconds: meta.tick_seconds,
            aborted: meta.aborted,
            agents,
            world: parse_jsonl(&read("world.log")?, "world.log")?,
            usage: parse_jsonl(&read("usage.jsonl")?, "usage.jsonl")?,
            memdumps,
            interviews: parse_jsonl(&read("interviews.jsonl")?, "interviews.jsonl")?,
        })
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> ScenarioError + '_ {
    move |e| ScenarioError::Io(format!("{}: {e}", path.display()))
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<Vec<T>, ScenarioError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| ScenarioError::Parse(format!("{what} line {}: {e}", i + 1))))
        .collect()
}

/// The config with provider files made absolute, so the copy in the run
/// directory still resolves.
fn portable_config(config: &ScenarioConfig) -> ScenarioConfig {
    let mut c = config.clone();
    let abs = |p: &Option<String>| {
        p.as_ref().map(|p| {
            let resolved = config.resolve_path(p);
            fs::canonicalize(&resolved).unwrap_or(resolved).to_string_lossy().into_owned()
        })
    };
    c.lang.rules = abs(&config.lang.rules);
    c.lang.recording = abs(&config.lang.recording);
    c.embedding.cache = abs(&config.embedding.cache);
    c
}

/// Remembers whether the wrapped provider ran out of completions.
struct ExhaustionWatch {
    inner: Arc<dyn LanguageProvider>,
    exhausted: AtomicBool,
}

impl LanguageProvider for ExhaustionWatch {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn context_limit(&self) -> u64 {
        self.inner.context_limit()
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation, LangError> {
        let r = self.inner.generate(request);
        if matches!(r, Err(LangError::Exhausted(_))) {
            self.exhausted.store(true, Ordering::SeqCst);
        }
        r
    }
}

/// Seeds brains from the config, places their bodies and returns both.
pub fn build_population(
    config: &ScenarioConfig,
    embedder: &Arc<dyn EmbeddingProvider>,
    mode: Mode,
    seed: u64,
) -> Result<(World, Vec<AgentBrain>), ScenarioError> {
    let map = WorldMap::resolve(&config.map).map_err(|e| ScenarioError::invalid("map", e.to_string()))?;
    let mut world = World::new(map, mode);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let brain_config = config.brain_config();
    let mut brains = Vec::new();
    for (i, spec) in config.agents.iter().enumerate() {
        let base = world
            .spawn_point(&spec.spawn)
            .map_err(|e| ScenarioError::invalid(format!("agents[{i}].spawn"), e.to_string()))?;
        let point = jitter(&world, base, config.spawn_jitter, &mut rng);
        world
            .add_agent(&spec.name, point)
            .map_err(|e| ScenarioError::invalid(format!("agents[{i}]"), e.to_string()))?;
        let mut brain = AgentBrain::new(
            Persona {
                name: spec.name.clone(),
                description: spec.persona.clone(),
            },
            spec.goal.clone(),
            brain_config.clone(),
            embedder.clone(),
        )
        .map_err(|e| ScenarioError::invalid("brain", e.to_string()))?;
        brain
            .seed(&spec.long_term_memories, &spec.recent_memories, 0)
            .map_err(|e| ScenarioError::invalid(format!("agents[{i}]"), e.to_string()))?;
        brains.push(brain);
    }
    for (i, h) in config.humans.iter().enumerate() {
        let p = world
            .spawn_point(&h.spawn)
            .map_err(|e| ScenarioError::invalid(format!("humans[{i}].spawn"), e.to_string()))?;
        world
            .add_scripted_human(&h.id, p)
            .map_err(|e| ScenarioError::invalid(format!("humans[{i}]"), e.to_string()))?;
    }
    Ok((world, brains))
}

fn jitter(world: &World, base: Point, amount: f64, rng: &mut ChaCha8Rng) -> Point {
    if amount <= 0.0 {
        return base;
    }
    let dx = rng.random_range(-amount..=amount);
    let dy = rng.random_range(-amount..=amount);
    world.map().clamp(Point::new(base.x + dx, base.y + dy))
}

/// Runs the scenario in deterministic mode. Provider exhaustion stops the
/// run early; the partial logs are kept and `aborted` says why.
pub fn run(config: &ScenarioConfig, providers: Providers, options: RunOptions) -> Result<RunLog, ScenarioError> {
    let (mut world, mut brains) = build_population(config, &providers.embedder, Mode::Deterministic, options.seed)?;
    let watch = Arc::new(ExhaustionWatch {
        inner: providers.language,
        exhausted: AtomicBool::new(false),
    });
    let ledger = UsageLedger::new();
    let lm = LlmClient::new(watch.clone(), TemplateSet::builtin(), ledger.clone());
    let mut interviews = Vec::new();

    if options.pre_interviews {
        for spec in &config.interviews {
            let brain = brains.iter().find(|b| b.name() == spec.agent).expect("validated interview agent");
            interviews.push(run_interview(spec, brain, &lm, Phase::Pre, 0));
        }
    }

    let mut aborted = None;
    let names: Vec<String> = brains.iter().map(|b| b.name().to_string()).collect();
    while world.tick() < config.duration_ticks {
        let tick = world.tick();
        let mut observations = world.sense_phase();
        for h in &config.humans {
            for line in h.lines.iter().filter(|l| l.tick == tick) {
                world.say(&h.id, &line.text).map_err(|e| ScenarioError::invalid("humans", e.to_string()))?;
            }
        }
        for (i, brain) in brains.iter_mut().enumerate() {
            let view = world.view(i);
            let action = brain.tick(&lm, &view, std::mem::take(&mut observations[i]));
            world
                .apply_action(&names[i], &action)
                .map_err(|e| ScenarioError::invalid("world", e.to_string()))?;
        }
        world.finish_tick();
        if watch.exhausted.load(Ordering::SeqCst) {
            aborted = Some(format!("language provider exhausted at tick {tick}"));
            break;
        }
    }
    let ticks_run = world.tick();

    // a zero-length run leaves the seeded memories untouched
    if aborted.is_none() && ticks_run > 0 {
        for brain in &mut brains {
            brain.finish_run(&lm, ticks_run);
        }
    }
    let memdumps: Vec<(String, String)> = brains.iter().map(|b| (b.name().to_string(), write_memdump(b.memory(), b.name()))).collect();

    if options.post_interviews && aborted.is_none() {
        for spec in &config.interviews {
            let (_, dump) = memdumps.iter().find(|(a, _)| *a == spec.agent).expect("validated interview agent");
            let brain = restore_brain(config, &spec.agent, dump, providers.embedder.clone())?;
            interviews.push(run_interview(spec, &brain, &lm, Phase::Post, ticks_run));
        }
    }

    Ok(RunLog {
        config: config.clone(),
        seed: options.seed,
        ticks_run,
        tick_seconds: world.map().tick_seconds,
        aborted,
        agents: brains
            .iter_mut()
            .map(|b| AgentLog {
                agent: b.name().to_string(),
                events: b.drain_events(),
            })
            .collect(),
        world: world.drain_log(),
        usage: ledger.snapshot(),
        memdumps,
        interviews,
    })
}

/// A brain for `agent` whose memory comes from a memdump.
pub fn restore_brain(config: &ScenarioConfig, agent: &str, dump: &str, embedder: Arc<dyn EmbeddingProvider>) -> Result<AgentBrain, ScenarioError> {
    let spec = config.agent(agent).ok_or_else(|| ScenarioError::UnknownAgent(agent.to_string()))?;
    let brain_config = config.brain_config();
    let (_, memory) = read_memdump(dump, brain_config.memory.clone(), embedder).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    Ok(AgentBrain::with_memory(
        Persona {
            name: spec.name.clone(),
            description: spec.persona.clone(),
        },
        spec.goal.clone(),
        brain_config,
        memory,
    ))
}

pub fn run_interview(
    spec: &InterviewSpec,
    brain: &AgentBrain,
    lm: &LlmClient,
    phase: Phase,
    tick: u64,
) -> InterviewRecord {
    let mut repeats = interview(brain, lm, &spec.questions, spec.repeats, tick);
    if !spec.categories.is_empty() {
        for r in &mut repeats {
            if r.valid {
                r.category = r.answers.last().map(|a| classify_answer(a, &spec.categories));
            }
        }
    }
    InterviewRecord {
        agent: spec.agent.clone(),
        phase,
        questions: spec.questions.clone(),
        repeats,
    }
}
