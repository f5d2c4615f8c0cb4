//! Scenario configs, deterministic runs, the interview protocol, ablations
//! and the evaluation metrics.

mod config;
mod interview;
mod metrics;
mod run;

use thiserror::Error;

pub use config::{
    Ablations, AgentSpec, Category, CostSection, EmbeddingProviderKind, EmbeddingSection, HumanSpec, InterviewSpec, KeyFact,
    LangProviderKind, LangSection, ScenarioConfig, ScriptLine, BUILTIN_SCENARIOS, SCENARIO_FORMAT,
};
pub use interview::{
    affinity_score, classify_answer, interview, success_rate, AnswerDistribution, InterviewRecord, InterviewRepeat, Phase, INDECISIVE,
    INTERVIEWER,
};
pub use metrics::{diffusion_metrics, AgentDiffusion, DiffusionReport};
pub use run::{build_population, file_stem, restore_brain, run, run_interview, AgentLog, Providers, RunLog, RunMeta, RunOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("{0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("unknown key fact `{0}`")]
    UnknownFact(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("answer distributions use different categories")]
    CategoryMismatch,
}

impl ScenarioError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}
