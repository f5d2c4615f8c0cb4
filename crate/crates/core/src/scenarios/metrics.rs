//! Information diffusion over a finished run.

use serde::{Deserialize, Serialize};

use super::interview::Phase;
use super::run::RunLog;
use super::ScenarioError;
use crate::agent::EventKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDiffusion {
    pub agent: String,
    /// The fact reached the agent in a delivered observation.
    pub received: bool,
    /// The fact is in the agent's final recentmem or longmem.
    pub stored: bool,
    /// The fact appears in a post-run interview answer.
    pub retrieved: bool,
}

impl AgentDiffusion {
    /// retrieved ⇒ stored ⇒ received.
    pub fn is_monotone(&self) -> bool {
        (!self.retrieved || self.stored) && (!self.stored || self.received)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionReport {
    pub fact: String,
    pub source: Option<String>,
    pub agents: Vec<AgentDiffusion>,
    pub received: f64,
    pub stored: f64,
    pub retrieved: f64,
}

impl DiffusionReport {
    pub fn agent(&self, name: &str) -> Option<&AgentDiffusion> {
        self.agents.iter().find(|a| a.agent == name)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("fact {}\n{:<20} {:>8} {:>8} {:>9}\n", self.fact, "agent", "received", "stored", "retrieved");
        let b = |x: bool| if x { "1" } else { "0" };
        for a in &self.agents {
            out.push_str(&format!("{:<20} {:>8} {:>8} {:>9}\n", a.agent, b(a.received), b(a.stored), b(a.retrieved)));
        }
        out.push_str(&format!(
            "{:<20} {:>8.3} {:>8.3} {:>9.3}\n",
            "population", self.received, self.stored, self.retrieved
        ));
        out
    }
}

/// Keyword-based received/stored/retrieved status of `fact_id` for every
/// agent other than the fact's source.
pub fn diffusion_metrics(log: &RunLog, fact_id: &str) -> Result<DiffusionReport, ScenarioError> {
    let fact = log
        .config
        .key_fact(fact_id)
        .ok_or_else(|| ScenarioError::UnknownFact(fact_id.to_string()))?;
    let mut agents = Vec::new();
    for a in &log.agents {
        if fact.source.as_deref() == Some(a.agent.as_str()) {
            continue;
        }
        let received = a.events.iter().any(|e| match &e.kind {
            EventKind::Observation { text, .. } => fact.detect(text),
            _ => false,
        });
        let stored = log
            .memdump(&a.agent)
            .map(|items| items.iter().any(|t| fact.detect(t)))
            .unwrap_or(false);
        let retrieved = log
            .interviews
            .iter()
            .filter(|r| r.agent == a.agent && r.phase == Phase::Post)
            .flat_map(|r| r.repeats.iter().flat_map(|rep| rep.answers.iter()))
            .any(|t| fact.detect(t));
        agents.push(AgentDiffusion {
            agent: a.agent.clone(),
            received,
            stored,
            retrieved,
        });
    }
    let n = agents.len().max(1) as f64;
    let frac = |f: fn(&AgentDiffusion) -> bool| agents.iter().filter(|a| f(a)).count() as f64 / n;
    Ok(DiffusionReport {
        fact: fact.id.clone(),
        source: fact.source.clone(),
        received: frac(|a| a.received),
        stored: frac(|a| a.stored),
        retrieved: frac(|a| a.retrieved),
        agents,
    })
}
