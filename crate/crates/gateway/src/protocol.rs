//! Wire format, `proto v1`. Every JSON object the gateway sends carries
//! `"proto": "v1"`; stream messages also carry a `kind` and the world `tick`.

use lyfe_core::realtime::{AgentInfo, StreamMessage, TickDelta};
use lyfe_core::world::{BodySnapshot, Location};
use serde::{Deserialize, Serialize};

pub const PROTO: &str = "v1";

/// Wraps a payload with the protocol version.
#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub proto: String,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Envelope<T> {
    pub fn new(body: T) -> Self {
        Self {
            proto: PROTO.to_string(),
            body,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    World,
    Chat,
    Interview,
}

pub const ALL_TOPICS: [Topic; 3] = [Topic::World, Topic::Chat, Topic::Interview];

/// Messages a client may send on `/stream`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Say {
        text: String,
    },
    Move {
        x: f64,
        y: f64,
    },
    Inspect {
        agent: String,
    },
    Interview {
        agent: String,
        question: String,
        #[serde(default)]
        repeats: Option<usize>,
    },
    Subscribe {
        topics: Vec<Topic>,
    },
}

/// Messages the gateway sends on `/stream`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome {
        tick: u64,
        player: Option<String>,
    },
    World(TickDelta),
    Chat {
        tick: u64,
        speaker: String,
        text: String,
        to: Vec<String>,
    },
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
    Agent {
        tick: u64,
        agent: AgentInfo,
    },
    Ack {
        tick: u64,
        op: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request: Option<u64>,
    },
    /// `missed` messages were dropped because this client fell behind.
    Gap {
        tick: u64,
        missed: u64,
    },
    Error {
        tick: u64,
        code: String,
        message: String,
    },
}

impl ServerMessage {
    pub fn topic(&self) -> Option<Topic> {
        match self {
            ServerMessage::World(_) => Some(Topic::World),
            ServerMessage::Chat { .. } => Some(Topic::Chat),
            ServerMessage::InterviewAnswer { .. } | ServerMessage::InterviewDone { .. } => Some(Topic::Interview),
            _ => None,
        }
    }

    /// Stream messages for one engine message: world deltas also yield one
    /// chat message per delivered utterance. With a `viewer`, deliveries are
    /// limited to those the viewer spoke or heard.
    pub fn from_stream(msg: StreamMessage, viewer: Option<&str>) -> Vec<ServerMessage> {
        match msg {
            StreamMessage::World(mut d) => {
                if let Some(v) = viewer {
                    d.deliveries.retain(|x| x.speaker == v || x.to.iter().any(|t| t == v));
                }
                let mut out: Vec<ServerMessage> = d
                    .deliveries
                    .iter()
                    .map(|x| ServerMessage::Chat {
                        tick: d.tick,
                        speaker: x.speaker.clone(),
                        text: x.text.clone(),
                        to: x.to.clone(),
                    })
                    .collect();
                out.insert(0, ServerMessage::World(d));
                out
            }
            StreamMessage::InterviewAnswer {
                tick,
                request,
                agent,
                repeat,
                question,
                answer,
            } => vec![ServerMessage::InterviewAnswer {
                tick,
                request,
                agent,
                repeat,
                question,
                answer,
            }],
            StreamMessage::InterviewDone { tick, request, agent, valid } => {
                vec![ServerMessage::InterviewDone { tick, request, agent, valid }]
            }
        }
    }
}

/// `GET /world`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldView {
    pub tick: u64,
    pub map: String,
    pub vicinity_radius: f64,
    pub locations: Vec<Location>,
    pub bodies: Vec<BodySnapshot>,
    pub agents: Vec<AgentSummary>,
}

/// One row of `GET /agents`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub option: Option<String>,
}

impl From<&AgentInfo> for AgentSummary {
    fn from(a: &AgentInfo) -> Self {
        Self {
            name: a.name.clone(),
            x: a.x,
            y: a.y,
            option: a.option.clone(),
        }
    }
}

/// `GET /agents`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentList {
    pub tick: u64,
    pub agents: Vec<AgentSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinRequest {
    pub player: String,
    #[serde(default)]
    pub location: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinResponse {
    pub player: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SayRequest {
    pub player: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveRequest {
    pub player: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterviewRequest {
    pub agent: String,
    /// One question, or several with `questions`.
    #[serde(default)]
    pub question: Option<String>,
    #[serde(default)]
    pub questions: Vec<String>,
    #[serde(default)]
    pub repeats: Option<usize>,
}

impl InterviewRequest {
    pub fn all_questions(&self) -> Vec<String> {
        self.question.iter().cloned().chain(self.questions.iter().cloned()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accepted {
    pub tick: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}
