//! The agent brain: novelty-filtered sensing, the cognitive controller that
//! picks an option and a subgoal, option executors with their termination
//! rules, the self-monitor summary and reflection.

mod brain;
mod parse;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::memory::MemoryConfig;

pub use brain::{AgentBrain, ConsolidationAdapter, SummaryJob, SummaryResult};
pub use parse::parse_option;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OptionKind {
    Talk,
    Move,
    Reflect,
}

impl OptionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptionKind::Talk => "TALK",
            OptionKind::Move => "MOVE",
            OptionKind::Reflect => "REFLECT",
        }
    }
}

impl fmt::Display for OptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A high-level action that persists over several steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentOption {
    pub kind: OptionKind,
    /// Destination for MOVE, empty otherwise.
    pub parameter: String,
}

impl AgentOption {
    pub fn talk() -> Self {
        Self {
            kind: OptionKind::Talk,
            parameter: String::new(),
        }
    }

    pub fn reflect() -> Self {
        Self {
            kind: OptionKind::Reflect,
            parameter: String::new(),
        }
    }

    pub fn move_to(destination: impl Into<String>) -> Self {
        Self {
            kind: OptionKind::Move,
            parameter: destination.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    Utterance,
    Arrival,
    Proximity,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub kind: ObservationKind,
    pub speaker: Option<String>,
    pub text: String,
    pub tick: u64,
}

impl Observation {
    pub fn utterance(speaker: impl Into<String>, text: impl Into<String>, tick: u64) -> Self {
        Self {
            kind: ObservationKind::Utterance,
            speaker: Some(speaker.into()),
            text: text.into(),
            tick,
        }
    }

    pub fn arrival(text: impl Into<String>, tick: u64) -> Self {
        Self {
            kind: ObservationKind::Arrival,
            speaker: None,
            text: text.into(),
            tick,
        }
    }

    pub fn proximity(text: impl Into<String>, tick: u64) -> Self {
        Self {
            kind: ObservationKind::Proximity,
            speaker: None,
            text: text.into(),
            tick,
        }
    }

    pub fn system(text: impl Into<String>, tick: u64) -> Self {
        Self {
            kind: ObservationKind::System,
            speaker: None,
            text: text.into(),
            tick,
        }
    }

    /// One-line form used in prompts and memories.
    pub fn render(&self) -> String {
        match &self.speaker {
            Some(s) => format!("{s}: {}", self.text),
            None => self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    /// e.g. "45 year old hotel manager".
    pub description: String,
}

/// Per-agent tunables. Everything here is scenario-configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BrainConfig {
    pub talk_budget: u64,
    pub move_budget: u64,
    pub repetition_threshold: f64,
    pub repetition_window: usize,
    pub novelty_window: u64,
    pub buffer_capacity: usize,
    pub controller_k_long: usize,
    pub controller_k_recent: usize,
    pub talk_k: usize,
    pub reflect_k: usize,
    /// Group utterances shown to the talk prompt.
    pub conversation_window: usize,
    /// Buffered observations shown to the controller.
    pub observation_window: usize,
    pub interview_memories: usize,
    /// False for the option-action ablation: controller every step.
    pub option_action: bool,
    /// False for the self-monitor ablation.
    pub self_monitor: bool,
    pub memory: MemoryConfig,
}

impl Default for BrainConfig {
    fn default() -> Self {
        Self {
            talk_budget: 90,
            move_budget: 600,
            repetition_threshold: 0.9,
            repetition_window: 4,
            novelty_window: 30,
            buffer_capacity: 50,
            controller_k_long: 3,
            controller_k_recent: 2,
            talk_k: 3,
            reflect_k: 5,
            conversation_window: 6,
            observation_window: 5,
            interview_memories: 15,
            option_action: true,
            self_monitor: true,
            memory: MemoryConfig::default(),
        }
    }
}

/// What the world tells a brain about its surroundings each tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorldView {
    pub tick: u64,
    /// Names of bodies within the vicinity radius, excluding self.
    pub nearby: Vec<String>,
    pub locations: Vec<String>,
    /// Every agent name, for MOVE targets.
    pub agents: Vec<String>,
    /// The body reached its destination this tick.
    pub arrived: bool,
    /// The last MOVE target could not be resolved.
    pub move_failed: bool,
}

/// An external action for the world to apply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Idle,
    Say { text: String },
    MoveTo { destination: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    Budget,
    Repetition,
    Arrived,
    MoveFailed,
    SingleStep,
    /// Option-action ablation: every option lasts one step.
    Ablation,
}

/// One line of an agent's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEvent {
    pub tick: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Seeded {
        long: usize,
        recent: usize,
    },
    Observation {
        kind: ObservationKind,
        speaker: Option<String>,
        text: String,
        admitted: bool,
    },
    OptionEnter {
        option: OptionKind,
        parameter: String,
        subgoal: String,
        fallback: bool,
    },
    OptionExit {
        option: OptionKind,
        reason: ExitReason,
        steps: u64,
        entered_tick: u64,
    },
    Utterance {
        text: String,
    },
    SummaryRequest {
        new_observations: usize,
    },
    SummaryUpdate {
        summary: String,
        count: u64,
    },
    Reflection {
        text: String,
    },
    Consolidation {
        moved: usize,
        clusters: usize,
        llm_calls: usize,
        retained: usize,
    },
    Forgotten {
        texts: Vec<String>,
    },
    CallFailed {
        site: String,
        error: String,
    },
    InterviewInit {
        question: String,
        memories: usize,
    },
    InterviewAnswer {
        question: String,
        answer: String,
        ok: bool,
    },
}
