//! Wall-clock simulation for interactive use.
//!
//! One engine thread owns the world and every brain. Each tick it drains
//! client commands, runs the sense phase, steps the brains and publishes a
//! snapshot plus one [`TickDelta`]. Summary updates never run on the engine
//! thread: a brain's [`SummaryJob`] goes to a worker thread and the result is
//! installed on a later tick, so a slow summary call cannot stall actions.

use std::collections::HashMap;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

use crate::agent::{AgentBrain, AgentEvent, AgentOption, OptionKind, SummaryResult};
use crate::embedding::EmbeddingProvider;
use crate::lang::{LanguageProvider, LlmClient, TemplateSet, UsageLedger, UsageRecord};
use crate::scenarios::{build_population, interview, ScenarioConfig, ScenarioError};
use crate::world::{BodySnapshot, Mode, Point, World, WorldError, WorldEvent, WorldEventKind, WorldSnapshot};

/// Events kept per agent in [`AgentInfo::recent_events`].
pub const INSPECT_EVENTS: usize = 10;

#[derive(Debug, Error)]
pub enum RealtimeError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("player `{0}` has not joined")]
    UnknownPlayer(String),
    #[error("simulation has stopped")]
    Stopped,
}

#[derive(Debug, Clone)]
pub struct RealtimeOptions {
    pub seed: u64,
    /// Wall-clock length of one tick. Zero runs as fast as possible.
    pub tick_interval: Duration,
    /// Stop after this many ticks; `None` runs until [`RealtimeHandle::stop`].
    pub max_ticks: Option<u64>,
    /// Messages buffered per stream subscriber before the oldest are dropped.
    pub stream_capacity: usize,
}

impl RealtimeOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            tick_interval: Duration::from_secs(1),
            max_ticks: None,
            stream_capacity: 256,
        }
    }
}

/// Read-path view of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub name: String,
    pub persona: String,
    pub goal: String,
    pub subgoal: String,
    pub summary: String,
    pub option: Option<String>,
    pub x: f64,
    pub y: f64,
    pub recent_events: Vec<AgentEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub speaker: String,
    pub text: String,
    pub to: Vec<String>,
}

/// Everything that changed during one world tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickDelta {
    pub tick: u64,
    pub bodies: Vec<BodySnapshot>,
    /// Current option per agent, in agent order.
    pub options: Vec<(String, Option<String>)>,
    pub deliveries: Vec<Delivery>,
    pub arrivals: Vec<(String, String)>,
}

/// One message on the event stream. Every variant carries a world tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamMessage {
    World(TickDelta),
    InterviewAnswer {
        tick: u64,
        request: u64,
        agent: String,
        repeat: usize,
        question: String,
        answer: String,
    },
    InterviewDone {
        tick: u64,
        request: u64,
        agent: String,
        valid: bool,
    },
}

impl StreamMessage {
    pub fn tick(&self) -> u64 {
        match self {
            StreamMessage::World(d) => d.tick,
            StreamMessage::InterviewAnswer { tick, .. } | StreamMessage::InterviewDone { tick, .. } => *tick,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Published {
    world: Option<WorldSnapshot>,
    agents: Vec<AgentInfo>,
}

/// Per-tick timing and the logs collected by a finished engine.
#[derive(Debug, Clone)]
pub struct RealtimeReport {
    pub ticks: u64,
    /// Wall time of each tick's engine work, excluding the pacing sleep.
    pub tick_latencies: Vec<Duration>,
    /// (tick, agent) of every summary job handed to a worker.
    pub summary_dispatches: Vec<(u64, String)>,
    pub agents: Vec<(String, Vec<AgentEvent>)>,
    pub world: Vec<WorldEvent>,
    pub usage: Vec<UsageRecord>,
}

impl RealtimeReport {
    pub fn max_tick_latency(&self) -> Duration {
        self.tick_latencies.iter().copied().max().unwrap_or_default()
    }
}

type Reply<T> = Sender<Result<T, RealtimeError>>;

enum Command {
    Join { player: String, at: Option<String>, reply: Reply<Point> },
    Leave { player: String },
    Say { player: String, text: String, reply: Reply<u64> },
    Move { player: String, x: f64, y: f64, reply: Reply<u64> },
    Interview { agent: String, questions: Vec<String>, repeats: usize, reply: Reply<u64> },
    Stop,
}

/// Client side of a running engine. Cheap to clone.
#[derive(Clone)]
pub struct RealtimeHandle {
    commands: Sender<Command>,
    published: Arc<RwLock<Published>>,
    stream: broadcast::Sender<StreamMessage>,
    agent_names: Arc<Vec<String>>,
}

impl RealtimeHandle {
    pub fn snapshot(&self) -> Option<WorldSnapshot> {
        self.published.read().expect("published lock").world.clone()
    }

    pub fn agents(&self) -> Vec<AgentInfo> {
        self.published.read().expect("published lock").agents.clone()
    }

    pub fn agent(&self, name: &str) -> Option<AgentInfo> {
        self.agents().into_iter().find(|a| a.name.eq_ignore_ascii_case(name))
    }

    pub fn agent_names(&self) -> &[String] {
        &self.agent_names
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamMessage> {
        self.stream.subscribe()
    }

    /// Adds a human body at a location (or the first one on the map).
    pub fn join(&self, player: &str, at: Option<&str>) -> Result<Point, RealtimeError> {
        self.request(|reply| Command::Join {
            player: player.to_string(),
            at: at.map(str::to_string),
            reply,
        })
    }

    pub fn leave(&self, player: &str) {
        let _ = self.commands.send(Command::Leave { player: player.to_string() });
    }

    /// Queues a human utterance; returns the tick it was spoken in.
    pub fn say(&self, player: &str, text: &str) -> Result<u64, RealtimeError> {
        self.request(|reply| Command::Say {
            player: player.to_string(),
            text: text.to_string(),
            reply,
        })
    }

    pub fn move_to(&self, player: &str, x: f64, y: f64) -> Result<u64, RealtimeError> {
        self.request(|reply| Command::Move {
            player: player.to_string(),
            x,
            y,
            reply,
        })
    }

    /// Starts an interview on a copy of a live agent. Answers arrive on the
    /// stream tagged with the returned request id.
    pub fn interview(&self, agent: &str, questions: Vec<String>, repeats: usize) -> Result<u64, RealtimeError> {
        self.request(|reply| Command::Interview {
            agent: agent.to_string(),
            questions,
            repeats,
            reply,
        })
    }

    fn request<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, RealtimeError> {
        let (tx, rx) = mpsc::channel();
        self.commands.send(make(tx)).map_err(|_| RealtimeError::Stopped)?;
        rx.recv().map_err(|_| RealtimeError::Stopped)?
    }
}

/// A running engine. Dropping it without [`Realtime::stop`] detaches the
/// engine thread.
pub struct Realtime {
    handle: RealtimeHandle,
    thread: Option<JoinHandle<RealtimeReport>>,
}

impl Realtime {
    pub fn start(
        config: &ScenarioConfig,
        language: Arc<dyn LanguageProvider>,
        embedder: Arc<dyn EmbeddingProvider>,
        options: RealtimeOptions,
    ) -> Result<Self, RealtimeError> {
        let (world, brains) = build_population(config, &embedder, Mode::Realtime, options.seed)?;
        let lm = LlmClient::new(language, TemplateSet::builtin(), UsageLedger::new()).with_wall_time(true);
        let (commands, command_rx) = mpsc::channel();
        let (stream, _) = broadcast::channel(options.stream_capacity.max(1));
        let names: Vec<String> = brains.iter().map(|b| b.name().to_string()).collect();
        let handle = RealtimeHandle {
            commands,
            published: Arc::new(RwLock::new(Published::default())),
            stream,
            agent_names: Arc::new(names),
        };
        let (results_tx, results) = mpsc::channel();
        let mut engine = Engine {
            config: config.clone(),
            world,
            brains,
            lm,
            options,
            commands: command_rx,
            results,
            results_tx,
            published: handle.published.clone(),
            stream: handle.stream.clone(),
            next_request: 0,
            report: RealtimeReport {
                ticks: 0,
                tick_latencies: Vec::new(),
                summary_dispatches: Vec::new(),
                agents: Vec::new(),
                world: Vec::new(),
                usage: Vec::new(),
            },
        };
        engine.publish(Vec::new());
        let thread = thread::Builder::new()
            .name("lyfe-engine".into())
            .spawn(move || engine.run())
            .expect("spawn engine thread");
        Ok(Self {
            handle,
            thread: Some(thread),
        })
    }

    pub fn handle(&self) -> RealtimeHandle {
        self.handle.clone()
    }

    /// Stops the engine after the current tick and returns its report.
    pub fn stop(self) -> RealtimeReport {
        let _ = self.handle.commands.send(Command::Stop);
        self.join()
    }

    /// Waits for the engine to finish on its own (`max_ticks`).
    pub fn join(mut self) -> RealtimeReport {
        self.thread.take().expect("engine thread").join().expect("engine thread panicked")
    }
}

struct Engine {
    config: ScenarioConfig,
    world: World,
    brains: Vec<AgentBrain>,
    lm: LlmClient,
    options: RealtimeOptions,
    commands: Receiver<Command>,
    results: Receiver<SummaryResult>,
    results_tx: Sender<SummaryResult>,
    published: Arc<RwLock<Published>>,
    stream: broadcast::Sender<StreamMessage>,
    next_request: u64,
    report: RealtimeReport,
}

impl Engine {
    fn run(mut self) -> RealtimeReport {
        let mut next_deadline = Instant::now();
        'ticks: loop {
            if self.options.max_ticks.is_some_and(|m| self.world.tick() >= m) {
                break;
            }
            // commands that arrive between ticks are handled before the next one
            loop {
                let wait = next_deadline.saturating_duration_since(Instant::now());
                match self.commands.recv_timeout(wait) {
                    Ok(Command::Stop) => break 'ticks,
                    Ok(cmd) => self.handle(cmd),
                    Err(RecvTimeoutError::Timeout) => break,
                    Err(RecvTimeoutError::Disconnected) => {
                        thread::sleep(wait);
                        break;
                    }
                }
            }
            let started = Instant::now();
            self.step();
            self.report.tick_latencies.push(started.elapsed());
            next_deadline = started + self.options.tick_interval;
        }
        self.finish()
    }

    fn step(&mut self) {
        let tick = self.world.tick();
        let log_start = self.world.log().len();
        let mut observations = self.world.sense_phase();
        for h in &self.config.humans {
            for line in h.lines.iter().filter(|l| l.tick == tick) {
                let _ = self.world.say(&h.id, &line.text);
            }
        }
        let mut finished: HashMap<String, Vec<SummaryResult>> = HashMap::new();
        while let Ok(r) = self.results.try_recv() {
            finished.entry(r.job.agent.clone()).or_default().push(r);
        }
        for i in 0..self.brains.len() {
            let view = self.world.view(i);
            let brain = &mut self.brains[i];
            brain.sense(std::mem::take(&mut observations[i]), tick);
            for r in finished.remove(brain.name()).unwrap_or_default() {
                brain.finish_summary(r, tick);
            }
            if brain.config().self_monitor {
                if let Some(job) = brain.prepare_summary(tick) {
                    self.report.summary_dispatches.push((tick, job.agent.clone()));
                    let lm = self.lm.clone();
                    let tx = self.results_tx.clone();
                    thread::spawn(move || {
                        let _ = tx.send(job.run(&lm));
                    });
                }
            } else {
                brain.absorb_raw_observations(tick);
            }
            brain.maybe_consolidate(&self.lm, tick);
            let action = brain.act(&self.lm, &view);
            let name = brain.name().to_string();
            let _ = self.world.apply_action(&name, &action);
        }
        let events = self.world.log()[log_start..].to_vec();
        self.world.finish_tick();
        self.report.ticks = self.world.tick();
        self.publish(events);
    }

    fn publish(&mut self, events: Vec<WorldEvent>) {
        let snapshot = self.world.snapshot();
        let agents: Vec<AgentInfo> = self
            .brains
            .iter()
            .map(|b| {
                let pos = self.world.position(b.name()).unwrap_or(Point::new(0.0, 0.0));
                let ev = b.events();
                AgentInfo {
                    name: b.name().to_string(),
                    persona: b.persona().description.clone(),
                    goal: b.goal().to_string(),
                    subgoal: b.subgoal().to_string(),
                    summary: b.summary().to_string(),
                    option: b.current_option().map(option_label),
                    x: pos.x,
                    y: pos.y,
                    recent_events: ev[ev.len().saturating_sub(INSPECT_EVENTS)..].to_vec(),
                }
            })
            .collect();
        let mut deliveries = Vec::new();
        let mut arrivals = Vec::new();
        for e in events {
            match e.kind {
                WorldEventKind::Delivered { speaker, text, to } => deliveries.push(Delivery { speaker, text, to }),
                WorldEventKind::Arrived { id, target } => arrivals.push((id, target)),
                _ => {}
            }
        }
        let delta = TickDelta {
            tick: snapshot.tick,
            bodies: snapshot.bodies.clone(),
            options: agents.iter().map(|a| (a.name.clone(), a.option.clone())).collect(),
            deliveries,
            arrivals,
        };
        {
            let mut p = self.published.write().expect("published lock");
            p.world = Some(snapshot);
            p.agents = agents;
        }
        if self.report.ticks > 0 {
            // no subscribers is fine
            let _ = self.stream.send(StreamMessage::World(delta));
        }
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Join { player, at, reply } => {
                let r = self.join(&player, at.as_deref());
                self.refresh_world();
                let _ = reply.send(r);
            }
            Command::Leave { player } => {
                // bodies stay in place; a departed player simply goes quiet
                tracing::info!(%player, "player left");
            }
            Command::Say { player, text, reply } => {
                let r = self.human(&player).and_then(|_| Ok(self.world.say(&player, &text)?)).map(|_| self.world.tick());
                let _ = reply.send(r);
            }
            Command::Move { player, x, y, reply } => {
                let r = self
                    .human(&player)
                    .and_then(|_| Ok(self.world.set_destination_point(&player, Point::new(x, y))?))
                    .map(|_| self.world.tick());
                self.refresh_world();
                let _ = reply.send(r);
            }
            Command::Interview {
                agent,
                questions,
                repeats,
                reply,
            } => {
                let _ = reply.send(self.start_interview(&agent, questions, repeats));
            }
            Command::Stop => {}
        }
    }

    fn refresh_world(&self) {
        self.published.write().expect("published lock").world = Some(self.world.snapshot());
    }

    fn join(&mut self, player: &str, at: Option<&str>) -> Result<Point, RealtimeError> {
        if let Some(i) = self.world.index_of(player) {
            return Ok(self.world.bodies()[i].position);
        }
        let location = match at {
            Some(l) => l.to_string(),
            None => self.world.map().locations[0].name.clone(),
        };
        let p = self.world.spawn_point(&location)?;
        self.world.attach_human(player, p)?;
        Ok(p)
    }

    fn human(&self, player: &str) -> Result<(), RealtimeError> {
        match self.world.index_of(player) {
            Some(i) if self.world.bodies()[i].kind == crate::world::BodyKind::Human => Ok(()),
            _ => Err(RealtimeError::UnknownPlayer(player.to_string())),
        }
    }

    fn start_interview(&mut self, agent: &str, questions: Vec<String>, repeats: usize) -> Result<u64, RealtimeError> {
        let brain = self
            .brains
            .iter()
            .find(|b| b.name().eq_ignore_ascii_case(agent))
            .ok_or_else(|| RealtimeError::UnknownAgent(agent.to_string()))?
            .clone();
        self.next_request += 1;
        let request = self.next_request;
        let tick = self.world.tick();
        let lm = self.lm.clone();
        let stream = self.stream.clone();
        thread::spawn(move || {
            let name = brain.name().to_string();
            let results = interview(&brain, &lm, &questions, repeats, tick);
            let mut valid = true;
            for r in results {
                valid &= r.valid;
                for (q, answer) in questions.iter().zip(r.answers) {
                    let _ = stream.send(StreamMessage::InterviewAnswer {
                        tick,
                        request,
                        agent: name.clone(),
                        repeat: r.repeat,
                        question: q.clone(),
                        answer,
                    });
                }
            }
            let _ = stream.send(StreamMessage::InterviewDone {
                tick,
                request,
                agent: name,
                valid,
            });
        });
        Ok(request)
    }

    fn finish(mut self) -> RealtimeReport {
        self.report.agents = self
            .brains
            .iter_mut()
            .map(|b| (b.name().to_string(), b.drain_events()))
            .collect();
        self.report.world = self.world.drain_log();
        self.report.usage = self.lm.ledger().snapshot();
        self.report
    }
}

fn option_label(o: &AgentOption) -> String {
    match o.kind {
        OptionKind::Move => format!("MOVE {}", o.parameter),
        kind => kind.to_string(),
    }
}
