use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use super::{
    parse_option, Action, AgentEvent, AgentOption, BrainConfig, EventKind, ExitReason, Observation, ObservationKind, OptionKind,
    Persona, WorldView,
};
use crate::embedding::{cosine_similarity, embed, EmbeddingProvider, EmbeddingVector};
use crate::lang::{CallSite, LangError, LlmClient, Prompt};
use crate::memory::{split_sentences, ClusterSummarizer, MemoryError, MemoryHierarchy, MemoryItem, MemorySource};

const NOTHING_YET: &str = "(nothing yet)";
const NONE: &str = "(none)";

#[derive(Debug, Clone)]
struct ActiveOption {
    option: AgentOption,
    entered_tick: u64,
    steps: u64,
}

/// A summary request taken off the brain so it can run elsewhere.
#[derive(Debug, Clone)]
pub struct SummaryJob {
    pub agent: String,
    pub prompt: Prompt,
    pub tick: u64,
    observations: Vec<Observation>,
}

#[derive(Debug, Clone)]
pub struct SummaryResult {
    pub job: SummaryJob,
    pub outcome: Result<String, LangError>,
}

impl SummaryJob {
    pub fn run(self, lm: &LlmClient) -> SummaryResult {
        let outcome = lm.complete(&self.prompt, &self.agent, CallSite::Summary, self.tick).map(|c| c.text);
        SummaryResult { job: self, outcome }
    }
}

/// Internal states and loops of one agent.
#[derive(Debug, Clone)]
pub struct AgentBrain {
    persona: Persona,
    goal: String,
    subgoal: String,
    current: Option<ActiveOption>,
    summary: String,
    summary_updates: u64,
    summary_tick: Option<u64>,
    summary_in_flight: bool,
    buffer: VecDeque<Observation>,
    unsummarized: Vec<Observation>,
    seen: HashMap<(ObservationKind, Option<String>, String), u64>,
    memory: MemoryHierarchy,
    own_utterances: VecDeque<Option<EmbeddingVector>>,
    conversation: VecDeque<String>,
    move_done: Option<ExitReason>,
    config: BrainConfig,
    events: Vec<AgentEvent>,
    action_steps: u64,
    options_entered: u64,
}

impl AgentBrain {
    pub fn new(persona: Persona, goal: impl Into<String>, config: BrainConfig, embedder: Arc<dyn EmbeddingProvider>) -> Result<Self, MemoryError> {
        let memory = MemoryHierarchy::new(config.memory.clone(), embedder)?;
        Ok(Self::with_memory(persona, goal, config, memory))
    }

    pub fn with_memory(persona: Persona, goal: impl Into<String>, config: BrainConfig, memory: MemoryHierarchy) -> Self {
        Self {
            persona,
            goal: goal.into(),
            subgoal: String::new(),
            current: None,
            summary: String::new(),
            summary_updates: 0,
            summary_tick: None,
            summary_in_flight: false,
            buffer: VecDeque::new(),
            unsummarized: Vec::new(),
            seen: HashMap::new(),
            memory,
            own_utterances: VecDeque::new(),
            conversation: VecDeque::new(),
            move_done: None,
            config,
            events: Vec::new(),
            action_steps: 0,
            options_entered: 0,
        }
    }

    /// Backstory goes to longmem and recent memories to recentmem, both
    /// without forgetting.
    pub fn seed(&mut self, long_term: &[String], recent: &[String], tick: u64) -> Result<(), MemoryError> {
        for m in long_term {
            self.memory.seed_long(m, tick)?;
        }
        for m in recent {
            self.memory.seed_recent(m, tick)?;
        }
        self.log(
            tick,
            EventKind::Seeded {
                long: long_term.len(),
                recent: recent.len(),
            },
        );
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.persona.name
    }

    pub fn persona(&self) -> &Persona {
        &self.persona
    }

    pub fn goal(&self) -> &str {
        &self.goal
    }

    pub fn subgoal(&self) -> &str {
        &self.subgoal
    }

    pub fn summary(&self) -> &str {
        &self.summary
    }

    pub fn summary_updates(&self) -> u64 {
        self.summary_updates
    }

    pub fn summary_in_flight(&self) -> bool {
        self.summary_in_flight
    }

    pub fn current_option(&self) -> Option<&AgentOption> {
        self.current.as_ref().map(|a| &a.option)
    }

    pub fn option_entered_tick(&self) -> Option<u64> {
        self.current.as_ref().map(|a| a.entered_tick)
    }

    pub fn action_steps(&self) -> u64 {
        self.action_steps
    }

    pub fn options_entered(&self) -> u64 {
        self.options_entered
    }

    pub fn memory(&self) -> &MemoryHierarchy {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut MemoryHierarchy {
        &mut self.memory
    }

    pub fn config(&self) -> &BrainConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut BrainConfig {
        &mut self.config
    }

    pub fn buffer(&self) -> impl Iterator<Item = &Observation> {
        self.buffer.iter()
    }

    pub fn events(&self) -> &[AgentEvent] {
        &self.events
    }

    pub fn drain_events(&mut self) -> Vec<AgentEvent> {
        std::mem::take(&mut self.events)
    }

    fn log(&mut self, tick: u64, kind: EventKind) {
        self.events.push(AgentEvent { tick, kind });
    }

    /// One deterministic tick: sense, self-monitor, consolidation, then the
    /// action loop. The summary runs before the action whenever its trigger
    /// fires.
    pub fn tick(&mut self, lm: &LlmClient, view: &WorldView, incoming: Vec<Observation>) -> Action {
        let now = view.tick;
        self.sense(incoming, now);
        if self.config.self_monitor {
            self.update_summary(lm, now);
        } else {
            self.absorb_raw_observations(now);
        }
        self.maybe_consolidate(lm, now);
        self.act(lm, view)
    }

    /// Novelty filter: drops exact repeats (kind, speaker, text) seen within
    /// the novelty window. Returns how many were admitted.
    pub fn sense(&mut self, incoming: Vec<Observation>, now: u64) -> usize {
        let mut admitted = 0;
        for obs in incoming {
            if obs.text.trim().is_empty() {
                continue;
            }
            let key = (obs.kind, obs.speaker.clone(), obs.text.clone());
            let fresh = self
                .seen
                .get(&key)
                .is_none_or(|&last| now.saturating_sub(last) >= self.config.novelty_window);
            self.log(
                now,
                EventKind::Observation {
                    kind: obs.kind,
                    speaker: obs.speaker.clone(),
                    text: obs.text.clone(),
                    admitted: fresh,
                },
            );
            if !fresh {
                continue;
            }
            self.seen.insert(key, now);
            if self.buffer.len() >= self.config.buffer_capacity {
                if let Some(dropped) = self.buffer.pop_front() {
                    tracing::debug!(agent = %self.persona.name, dropped = %dropped.text, "observation buffer full");
                }
            }
            let rendered = obs.render();
            if obs.kind == ObservationKind::Utterance {
                self.push_conversation(rendered.clone());
            }
            if let Err(e) = self.memory.observe(&rendered, now) {
                tracing::debug!(error = %e, "observation not mirrored into workmem");
            }
            self.buffer.push_back(obs.clone());
            self.unsummarized.push(obs);
            admitted += 1;
        }
        if self.seen.len() > 4096 {
            let window = self.config.novelty_window;
            self.seen.retain(|_, &mut t| now.saturating_sub(t) < window);
        }
        admitted
    }

    fn push_conversation(&mut self, line: String) {
        self.conversation.push_back(line);
        while self.conversation.len() > self.config.conversation_window {
            self.conversation.pop_front();
        }
    }

    /// Applies the movement flags the world reported for this tick.
    pub fn note_view(&mut self, view: &WorldView) {
        if self.current.as_ref().is_some_and(|a| a.option.kind == OptionKind::Move) {
            if view.move_failed {
                self.move_done = Some(ExitReason::MoveFailed);
            } else if view.arrived {
                self.move_done = Some(ExitReason::Arrived);
            }
        }
    }

    pub fn has_new_observations(&self) -> bool {
        !self.unsummarized.is_empty()
    }

    /// Takes the pending observations into a summary request. `None` when
    /// there is nothing new, the self-monitor is off, or one is in flight.
    pub fn prepare_summary(&mut self, now: u64) -> Option<SummaryJob> {
        if !self.config.self_monitor || self.summary_in_flight || self.unsummarized.is_empty() {
            return None;
        }
        let observations = std::mem::take(&mut self.unsummarized);
        let recent_events = lines(self.memory.workmem().items().iter().map(|i| i.text.as_str()));
        let new_observations = lines(observations.iter().map(Observation::render));
        let prompt = self
            .base_prompt("summary")
            .slot("summary", self.summary_or_placeholder())
            .slot("recent_events", recent_events)
            .slot("new_observations", new_observations)
            .slot("tick", now.to_string());
        self.summary_in_flight = true;
        self.log(
            now,
            EventKind::SummaryRequest {
                new_observations: observations.len(),
            },
        );
        Some(SummaryJob {
            agent: self.persona.name.clone(),
            prompt,
            tick: now,
            observations,
        })
    }

    /// Installs a finished summary. The previous summary is split into
    /// sentences and stored in recentmem. Results older than the installed
    /// summary are dropped; failures keep the old summary and requeue the
    /// observations.
    pub fn finish_summary(&mut self, result: SummaryResult, now: u64) -> Option<String> {
        self.summary_in_flight = false;
        let SummaryResult { job, outcome } = result;
        match outcome.map(|t| t.trim().to_string()) {
            Ok(text) if !text.is_empty() => {
                if self.summary_tick.is_some_and(|t| job.tick < t) {
                    return None;
                }
                let old = std::mem::replace(&mut self.summary, text.clone());
                self.store_sentences(&old, MemorySource::Summary, now);
                self.summary_updates += 1;
                self.summary_tick = Some(job.tick);
                self.log(
                    now,
                    EventKind::SummaryUpdate {
                        summary: text.clone(),
                        count: self.summary_updates,
                    },
                );
                Some(text)
            }
            other => {
                let error = match other {
                    Err(e) => e.to_string(),
                    Ok(_) => "empty summary".to_string(),
                };
                let mut requeued = job.observations;
                requeued.append(&mut self.unsummarized);
                self.unsummarized = requeued;
                self.log(
                    now,
                    EventKind::CallFailed {
                        site: CallSite::Summary.to_string(),
                        error,
                    },
                );
                None
            }
        }
    }

    /// Synchronous self-monitor update; only calls the LLM when there are
    /// new observations.
    pub fn update_summary(&mut self, lm: &LlmClient, now: u64) -> Option<String> {
        let job = self.prepare_summary(now)?;
        let result = job.run(lm);
        self.finish_summary(result, now)
    }

    /// Self-monitor ablation: buffered observations go straight to recentmem.
    pub fn absorb_raw_observations(&mut self, now: u64) {
        for obs in std::mem::take(&mut self.unsummarized) {
            self.store_text(&obs.render(), MemorySource::Observation, now);
        }
    }

    fn store_sentences(&mut self, text: &str, source: MemorySource, now: u64) {
        for sentence in split_sentences(text) {
            self.store_text(&sentence, source, now);
        }
    }

    fn store_text(&mut self, text: &str, source: MemorySource, now: u64) {
        match self.memory.add_recent(text, source, now) {
            Ok(evicted) => self.log_forgotten(evicted, now),
            Err(e) => tracing::debug!(error = %e, "memory not stored"),
        }
    }

    fn log_forgotten(&mut self, evicted: Vec<MemoryItem>, now: u64) {
        if !evicted.is_empty() {
            self.log(
                now,
                EventKind::Forgotten {
                    texts: evicted.into_iter().map(|i| i.text).collect(),
                },
            );
        }
    }

    pub fn maybe_consolidate(&mut self, lm: &LlmClient, now: u64) {
        if self.memory.needs_consolidation() {
            self.consolidate_now(lm, now);
        }
    }

    fn consolidate_now(&mut self, lm: &LlmClient, now: u64) {
        let adapter = ConsolidationAdapter {
            lm,
            agent: self.persona.name.clone(),
            tick: now,
        };
        match self.memory.consolidate_now(&adapter, now) {
            Ok(report) => {
                if report.clusters > 0 {
                    self.log(
                        now,
                        EventKind::Consolidation {
                            moved: report.moved,
                            clusters: report.clusters,
                            llm_calls: report.llm_calls,
                            retained: report.retained_clusters,
                        },
                    );
                }
                self.log_forgotten(report.evicted, now);
            }
            Err(e) => tracing::warn!(error = %e, "consolidation failed"),
        }
    }

    /// End of run: the installed summary is stored like any replaced one,
    /// then recentmem is consolidated regardless of fill level.
    pub fn finish_run(&mut self, lm: &LlmClient, now: u64) {
        if self.config.self_monitor {
            let summary = self.summary.clone();
            self.store_sentences(&summary, MemorySource::Summary, now);
        } else {
            self.absorb_raw_observations(now);
        }
        self.consolidate_now(lm, now);
    }

    /// The action loop for one tick: terminate, select if idle, step, and
    /// check termination again.
    pub fn act(&mut self, lm: &LlmClient, view: &WorldView) -> Action {
        let now = view.tick;
        self.note_view(view);
        if let Some(reason) = self.check_termination(now) {
            self.exit_option(reason, now);
        }
        if self.current.is_none() {
            match self.select_option(lm, view) {
                Ok((option, subgoal, fallback)) => self.enter_option(option, subgoal, fallback, now),
                Err(e) => {
                    self.log(
                        now,
                        EventKind::CallFailed {
                            site: CallSite::Controller.to_string(),
                            error: e.to_string(),
                        },
                    );
                    return Action::Idle;
                }
            }
        }
        let action = self.step_option(lm, view);
        if let Some(reason) = self.check_termination(now) {
            self.exit_option(reason, now);
        }
        action
    }

    /// Cognitive controller. Unparseable completions and unknown MOVE
    /// targets fall back to REFLECT with subgoal "reconsider"; the third
    /// value reports whether that happened.
    pub fn select_option(&mut self, lm: &LlmClient, view: &WorldView) -> Result<(AgentOption, String, bool), LangError> {
        let now = view.tick;
        let memories = self.retrieve_lines(&self.context_query(), self.config.controller_k_long, self.config.controller_k_recent);
        let observations = lines(
            self.buffer
                .iter()
                .rev()
                .take(self.config.observation_window)
                .collect::<Vec<_>>()
                .into_iter()
                .rev()
                .map(Observation::render),
        );
        let prompt = self
            .base_prompt("controller")
            .slot("summary", self.summary_context())
            .slot("memories", memories)
            .slot("observations", observations)
            .slot("nearby", join_or_none(&view.nearby))
            .slot("locations", join_or_none(&view.locations))
            .slot("tick", now.to_string());
        let text = lm.complete(&prompt, &self.persona.name, CallSite::Controller, now)?.text;
        let parsed = parse_option(&text).filter(|(o, _)| o.kind != OptionKind::Move || self.known_destination(view, &o.parameter));
        Ok(match parsed {
            Some((option, subgoal)) => (option, subgoal, false),
            None => (AgentOption::reflect(), "reconsider".to_string(), true),
        })
    }

    fn known_destination(&self, view: &WorldView, name: &str) -> bool {
        let eq = |c: &String| c.eq_ignore_ascii_case(name);
        view.locations.iter().any(eq) || view.agents.iter().filter(|a| **a != self.persona.name).any(eq)
    }

    fn enter_option(&mut self, option: AgentOption, subgoal: String, fallback: bool, now: u64) {
        if option.kind == OptionKind::Talk {
            self.own_utterances.clear();
        }
        self.move_done = None;
        self.subgoal = subgoal.clone();
        self.options_entered += 1;
        self.log(
            now,
            EventKind::OptionEnter {
                option: option.kind,
                parameter: option.parameter.clone(),
                subgoal,
                fallback,
            },
        );
        self.current = Some(ActiveOption {
            option,
            entered_tick: now,
            steps: 0,
        });
    }

    fn exit_option(&mut self, reason: ExitReason, now: u64) {
        if let Some(active) = self.current.take() {
            self.subgoal.clear();
            self.move_done = None;
            self.log(
                now,
                EventKind::OptionExit {
                    option: active.option.kind,
                    reason,
                    steps: active.steps,
                    entered_tick: active.entered_tick,
                },
            );
        }
    }

    /// One step inside the current option. TALK and REFLECT make one LLM
    /// call each; MOVE makes none.
    pub fn step_option(&mut self, lm: &LlmClient, view: &WorldView) -> Action {
        let now = view.tick;
        let Some(active) = self.current.as_mut() else {
            return Action::Idle;
        };
        active.steps += 1;
        self.action_steps += 1;
        match active.option.kind {
            OptionKind::Move => Action::MoveTo {
                destination: active.option.parameter.clone(),
            },
            OptionKind::Talk => self.talk_step(lm, view),
            OptionKind::Reflect => {
                self.reflect_step(lm, now);
                Action::Idle
            }
        }
    }

    fn talk_step(&mut self, lm: &LlmClient, view: &WorldView) -> Action {
        let now = view.tick;
        let last_heard = self
            .buffer
            .iter()
            .rev()
            .find(|o| o.kind == ObservationKind::Utterance)
            .map(|o| o.text.clone())
            .unwrap_or_default();
        let query = format!("{} {}", self.subgoal, last_heard);
        let memories = self.retrieve_lines(&query, self.config.talk_k, 0);
        let conversation = if self.conversation.is_empty() {
            NONE.to_string()
        } else {
            lines(self.conversation.iter())
        };
        let prompt = self
            .base_prompt("talk")
            .slot("subgoal", self.subgoal.clone())
            .slot("summary", self.summary_context())
            .slot("memories", memories)
            .slot("nearby", join_or_none(&view.nearby))
            .slot("conversation", conversation)
            .slot("last_heard", last_heard)
            .slot("tick", now.to_string());
        let text = match lm.complete(&prompt, &self.persona.name, CallSite::Talk, now) {
            Ok(c) => clean_utterance(&c.text),
            Err(e) => {
                self.log(
                    now,
                    EventKind::CallFailed {
                        site: CallSite::Talk.to_string(),
                        error: e.to_string(),
                    },
                );
                return Action::Idle;
            }
        };
        if text.is_empty() {
            return Action::Idle;
        }
        let vector = embed(self.memory.embedder().as_ref(), &text).ok();
        self.own_utterances.push_back(vector);
        while self.own_utterances.len() > self.config.repetition_window + 1 {
            self.own_utterances.pop_front();
        }
        let name = self.persona.name.clone();
        self.push_conversation(format!("{name}: {text}"));
        self.log(now, EventKind::Utterance { text: text.clone() });
        Action::Say { text }
    }

    fn reflect_step(&mut self, lm: &LlmClient, now: u64) {
        let query = if self.subgoal.is_empty() {
            self.context_query()
        } else {
            format!("{} {}", self.subgoal, self.goal)
        };
        let memories = self.retrieve_lines(&query, self.config.reflect_k, self.config.controller_k_recent);
        let prompt = self
            .base_prompt("reflect")
            .slot("subgoal", self.subgoal.clone())
            .slot("summary", self.summary_context())
            .slot("memories", memories)
            .slot("tick", now.to_string());
        match lm.complete(&prompt, &self.persona.name, CallSite::Reflect, now) {
            Ok(c) => {
                let text = c.text.trim().to_string();
                if !text.is_empty() {
                    self.store_text(&text, MemorySource::Reflection, now);
                    self.log(now, EventKind::Reflection { text });
                }
            }
            Err(e) => self.log(
                now,
                EventKind::CallFailed {
                    site: CallSite::Reflect.to_string(),
                    error: e.to_string(),
                },
            ),
        }
    }

    /// Why the current option should end at `now`, if it should.
    pub fn check_termination(&self, now: u64) -> Option<ExitReason> {
        let active = self.current.as_ref()?;
        if !self.config.option_action && active.steps >= 1 {
            return Some(ExitReason::Ablation);
        }
        let elapsed = now.saturating_sub(active.entered_tick);
        match active.option.kind {
            OptionKind::Reflect => (active.steps >= 1).then_some(ExitReason::SingleStep),
            OptionKind::Move => self
                .move_done
                .or_else(|| (elapsed >= self.config.move_budget).then_some(ExitReason::Budget)),
            OptionKind::Talk => {
                if elapsed >= self.config.talk_budget {
                    Some(ExitReason::Budget)
                } else if self.is_repeating() {
                    Some(ExitReason::Repetition)
                } else {
                    None
                }
            }
        }
    }

    /// Newest own utterance against the previous W own utterances.
    fn is_repeating(&self) -> bool {
        let Some(Some(newest)) = self.own_utterances.back() else {
            return false;
        };
        self.own_utterances
            .iter()
            .rev()
            .skip(1)
            .take(self.config.repetition_window)
            .flatten()
            .filter_map(|v| cosine_similarity(newest, v).ok())
            .any(|s| s > self.config.repetition_threshold)
    }

    /// Clears volatile state before an interview repeat.
    pub fn reset_volatile(&mut self) {
        self.current = None;
        self.subgoal.clear();
        self.summary.clear();
        self.summary_tick = None;
        self.summary_in_flight = false;
        self.buffer.clear();
        self.unsummarized.clear();
        self.seen.clear();
        self.own_utterances.clear();
        self.conversation.clear();
        self.move_done = None;
    }

    /// Interview initialization: a reflection over the `min(n, |longmem|)`
    /// longmem items most relevant to the first question becomes the
    /// summary. Skipped when the self-monitor is ablated. Returns how many
    /// memories were used.
    pub fn init_interview(&mut self, lm: &LlmClient, first_question: &str, now: u64) -> Result<usize, LangError> {
        self.subgoal = "answer the interviewer honestly".to_string();
        if !self.config.self_monitor {
            self.log(
                now,
                EventKind::InterviewInit {
                    question: first_question.to_string(),
                    memories: 0,
                },
            );
            return Ok(0);
        }
        let n = self.config.interview_memories.min(self.memory.longmem().len());
        let memories = if n == 0 {
            Vec::new()
        } else {
            self.memory.retrieve_long(first_question, n).unwrap_or_default()
        };
        let prompt = self
            .base_prompt("interview_init")
            .slot("question", first_question)
            .slot("memories", memory_lines(&memories));
        let text = lm.complete(&prompt, &self.persona.name, CallSite::Interview, now)?.text;
        self.summary = text.trim().to_string();
        self.summary_tick = Some(now);
        self.log(
            now,
            EventKind::InterviewInit {
                question: first_question.to_string(),
                memories: memories.len(),
            },
        );
        Ok(memories.len())
    }

    pub fn answer_interview(&mut self, lm: &LlmClient, question: &str, now: u64) -> Result<String, LangError> {
        let memories = self.retrieve_lines(question, self.config.controller_k_long, self.config.controller_k_recent);
        let prompt = self
            .base_prompt("interview")
            .slot("summary", self.summary_context())
            .slot("memories", memories)
            .slot("question", question);
        let result = lm.complete(&prompt, &self.persona.name, CallSite::Interview, now).map(|c| c.text.trim().to_string());
        let (answer, ok) = match &result {
            Ok(a) => (a.clone(), true),
            Err(_) => (String::new(), false),
        };
        self.log(
            now,
            EventKind::InterviewAnswer {
                question: question.to_string(),
                answer,
                ok,
            },
        );
        result
    }

    fn base_prompt(&self, template: &str) -> Prompt {
        Prompt::new(template)
            .slot("agent", self.persona.name.clone())
            .slot("persona", self.persona.description.clone())
            .slot("goal", self.goal.clone())
    }

    fn summary_or_placeholder(&self) -> String {
        if self.summary.is_empty() {
            NOTHING_YET.to_string()
        } else {
            self.summary.clone()
        }
    }

    /// The summary slot of action prompts. With the self-monitor ablated it
    /// carries the goal and the raw buffer instead.
    fn summary_context(&self) -> String {
        if self.config.self_monitor {
            return self.summary_or_placeholder();
        }
        let recent: Vec<String> = self
            .buffer
            .iter()
            .rev()
            .take(self.config.observation_window)
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .map(Observation::render)
            .collect();
        format!("My goal is: {}\nWhat I observed recently:\n{}", self.goal, lines(recent.iter()))
    }

    fn context_query(&self) -> String {
        let mut q = self.goal.clone();
        for o in self.buffer.iter().rev().take(2) {
            q.push(' ');
            q.push_str(&o.text);
        }
        q
    }

    fn retrieve_lines(&self, query: &str, k_long: usize, k_recent: usize) -> String {
        match self.memory.retrieve(query, k_long, k_recent) {
            Ok(items) => memory_lines(&items),
            Err(e) => {
                tracing::debug!(error = %e, "retrieval failed");
                NONE.to_string()
            }
        }
    }
}

/// Calls the consolidate template for cluster-then-summarize.
pub struct ConsolidationAdapter<'a> {
    pub lm: &'a LlmClient,
    pub agent: String,
    pub tick: u64,
}

impl ClusterSummarizer for ConsolidationAdapter<'_> {
    fn summarize(&self, texts: &[&str]) -> Result<String, String> {
        let prompt = Prompt::new("consolidate")
            .slot("agent", self.agent.clone())
            .slot("memories", lines(texts.iter().copied()))
            .slot("memories_joined", texts.join(" "));
        self.lm
            .complete(&prompt, &self.agent, CallSite::Consolidate, self.tick)
            .map(|c| c.text)
            .map_err(|e| e.to_string())
    }
}

fn lines<I, S>(items: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let out: Vec<String> = items.into_iter().map(|s| format!("- {}", s.as_ref())).collect();
    if out.is_empty() {
        NONE.to_string()
    } else {
        out.join("\n")
    }
}

fn memory_lines(items: &[MemoryItem]) -> String {
    lines(items.iter().map(|i| i.text.as_str()))
}

fn join_or_none(names: &[String]) -> String {
    if names.is_empty() {
        "no one".to_string()
    } else {
        names.join(", ")
    }
}

fn clean_utterance(text: &str) -> String {
    text.trim().trim_matches('"').trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashedBagOfTokens;
    use crate::lang::{ScriptedProvider, TemplateSet, UsageLedger};

    fn brain(config: BrainConfig) -> AgentBrain {
        AgentBrain::new(
            Persona {
                name: "Marta Rodriguez".into(),
                description: "45 year old hotel manager".into(),
            },
            "To investigate the mystery of the murder of Ahmed Khan",
            config,
            Arc::new(HashedBagOfTokens::default()),
        )
        .unwrap()
    }

    fn client(rules: &str) -> LlmClient {
        LlmClient::new(Arc::new(ScriptedProvider::parse(rules).unwrap()), TemplateSet::builtin(), UsageLedger::new())
    }

    fn view(tick: u64) -> WorldView {
        WorldView {
            tick,
            nearby: vec!["Richard Smith".into()],
            locations: vec!["hotel".into(), "library".into()],
            agents: vec!["Marta Rodriguez".into(), "Richard Smith".into()],
            ..WorldView::default()
        }
    }

    #[test]
    fn novelty_window() {
        let mut b = brain(BrainConfig::default());
        let hi = Observation::utterance("Richard Smith", "hello", 0);
        assert_eq!(b.sense(vec![hi.clone(), hi.clone()], 0), 1);
        assert_eq!(b.sense(vec![Observation::utterance("Richard Smith", "bye", 1), Observation::utterance("Richard Smith", "again", 1)], 1), 2);
        assert_eq!(b.sense(vec![hi.clone()], 20), 0);
        assert_eq!(b.sense(vec![hi], 40), 1);
    }

    #[test]
    fn controller_rule_selects_talk() {
        let lm = client("when: controller contains \"nearby: Richard\" reply: TALK | subgoal: ask Richard about last night\n");
        let mut b = brain(BrainConfig::default());
        let (o, s, fallback) = b.select_option(&lm, &view(0)).unwrap();
        assert_eq!(o, AgentOption::talk());
        assert_eq!(s, "ask Richard about last night");
        assert!(!fallback);
    }

    #[test]
    fn unknown_move_target_falls_back_to_reflect() {
        let lm = client("when: controller reply: MOVE moon base | subgoal: escape\n");
        let mut b = brain(BrainConfig::default());
        let (o, s, fallback) = b.select_option(&lm, &view(0)).unwrap();
        assert_eq!(o.kind, OptionKind::Reflect);
        assert_eq!(s, "reconsider");
        assert!(fallback);
    }

    #[test]
    fn reflect_stores_insight_and_ends_after_one_step() {
        let lm = client("when: controller reply: REFLECT | subgoal: think\nwhen: reflect reply: Richard seemed nervous about the hotel.\n");
        let mut b = brain(BrainConfig::default());
        assert_eq!(b.act(&lm, &view(0)), Action::Idle);
        assert!(b.current_option().is_none());
        assert!(b.memory().recentmem().items().iter().any(|i| i.text == "Richard seemed nervous about the hotel."
            && i.source == MemorySource::Reflection));
    }

    #[test]
    fn talk_for_five_steps_then_repetition() {
        let lm = client(
            "when: controller reply: TALK | subgoal: chat\nwhen: talk\nreply: The hotel was quiet last night.\nreply: Did you see Ahmed at dinner?\nreply: Francesco left early, I think.\nreply: Richard was at the izakaya.\n",
        );
        let mut b = brain(BrainConfig::default());
        let mut said = Vec::new();
        for t in 0..5 {
            said.push(b.act(&lm, &view(t)));
        }
        assert!(said.iter().all(|a| matches!(a, Action::Say { .. })));
        assert!(b.current_option().is_none(), "fifth utterance repeats the first");
        assert_eq!(lm.ledger().count(CallSite::Controller), 1);
        assert_eq!(lm.ledger().count(CallSite::Talk), 5);
        let exit = b.events().iter().rev().find_map(|e| match &e.kind {
            EventKind::OptionExit { reason, steps, .. } => Some((*reason, *steps)),
            _ => None,
        });
        assert_eq!(exit, Some((ExitReason::Repetition, 5)));
    }

    #[test]
    fn talk_budget_expires() {
        let lm = client(
            "when: controller reply: TALK | subgoal: chat\nwhen: talk\nreply: The hotel was quiet last night.\nreply: Did you see Ahmed at dinner?\nreply: Francesco left early, I think.\nreply: Richard was at the izakaya.\nreply: Someone should call the police.\n",
        );
        let mut b = brain(BrainConfig::default());
        for t in 0..90 {
            b.act(&lm, &view(t));
            assert!(b.current_option().is_some(), "still talking at {t}");
        }
        assert_eq!(b.check_termination(90), Some(ExitReason::Budget));
    }

    #[test]
    fn move_runs_without_llm_calls_until_arrival() {
        let lm = client("when: controller reply: MOVE hotel | subgoal: inspect room 203\n");
        let mut b = brain(BrainConfig::default());
        assert_eq!(
            b.act(&lm, &view(0)),
            Action::MoveTo {
                destination: "hotel".into()
            }
        );
        b.act(&lm, &view(1));
        assert_eq!(lm.ledger().len(), 1);
        let mut arrived = view(2);
        arrived.arrived = true;
        b.note_view(&arrived);
        assert_eq!(b.check_termination(2), Some(ExitReason::Arrived));
    }

    #[test]
    fn summary_only_with_new_observations() {
        let lm = client("when: summary reply: Richard greeted me.\n");
        let mut b = brain(BrainConfig::default());
        assert!(b.update_summary(&lm, 0).is_none());
        assert_eq!(lm.ledger().len(), 0);
        b.sense(vec![Observation::utterance("Richard Smith", "hello Marta", 1)], 1);
        assert_eq!(b.update_summary(&lm, 1).as_deref(), Some("Richard greeted me."));
        assert_eq!(b.summary_updates(), 1);
        assert!(b.update_summary(&lm, 2).is_none());
        assert_eq!(lm.ledger().count(CallSite::Summary), 1);
    }

    #[test]
    fn replaced_summary_goes_to_recentmem() {
        let lm = client("when: summary reply: Summary about {new_observations} at tick {tick}.\n");
        let mut b = brain(BrainConfig::default());
        b.sense(vec![Observation::utterance("Richard Smith", "first news", 1)], 1);
        b.update_summary(&lm, 1);
        assert!(b.memory().recentmem().is_empty());
        b.sense(vec![Observation::utterance("Richard Smith", "second news", 2)], 2);
        b.update_summary(&lm, 2);
        assert_eq!(b.memory().recentmem().len(), 1);
        assert!(b.memory().recentmem().items()[0].text.contains("first news"));
    }

    #[test]
    fn stale_summary_results_are_dropped() {
        let lm = client("when: summary reply: newer\n");
        let mut b = brain(BrainConfig::default());
        b.sense(vec![Observation::system("a thing happened", 5)], 5);
        let newer = b.prepare_summary(5).unwrap().run(&lm);
        b.finish_summary(newer, 5);
        let stale = SummaryResult {
            job: SummaryJob {
                agent: "Marta Rodriguez".into(),
                prompt: Prompt::new("summary"),
                tick: 3,
                observations: Vec::new(),
            },
            outcome: Ok("older".into()),
        };
        assert!(b.finish_summary(stale, 6).is_none());
        assert_eq!(b.summary(), "newer");
    }

    #[test]
    fn option_ablation_calls_controller_every_step() {
        let lm = client("when: controller reply: TALK | subgoal: chat\nwhen: talk reply: line {tick}\n");
        let mut b = brain(BrainConfig {
            option_action: false,
            ..BrainConfig::default()
        });
        for t in 0..6 {
            b.act(&lm, &view(t));
        }
        assert_eq!(lm.ledger().count(CallSite::Controller), 6);
        assert_eq!(lm.ledger().count(CallSite::Talk), 6);
    }

    #[test]
    fn interview_answers_from_memory() {
        let lm = client(
            "when: interview_init reply: I remember {memories}\nwhen: interview contains \"bloody knife\" reply: It was Francesco.\ndefault interview: I am not sure.\n",
        );
        let mut b = brain(BrainConfig::default());
        assert_eq!(b.answer_interview(&lm, "Who is the suspect?", 0).unwrap(), "I am not sure.");
        b.seed(&["Dmitri saw Francesco leaving with a bloody knife.".to_string()], &[], 0).unwrap();
        b.reset_volatile();
        assert_eq!(b.init_interview(&lm, "Who is the suspect?", 0).unwrap(), 1);
        assert!(b.answer_interview(&lm, "Who is the suspect?", 0).unwrap().contains("Francesco"));
    }
}
