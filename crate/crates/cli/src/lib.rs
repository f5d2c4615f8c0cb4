//! Report builders behind the `lyfe` binary. Everything here reads a
//! finished [`RunLog`]; nothing re-runs a simulation.

use std::collections::BTreeSet;

use lyfe_core::scenarios::{
    affinity_score, diffusion_metrics, restore_brain, run_interview, success_rate, AnswerDistribution, InterviewRecord, InterviewSpec, Phase,
    Providers, RunLog, ScenarioError,
};
use lyfe_core::lang::{LlmClient, TemplateSet, UsageLedger};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
}

/// One line of the metrics output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricRecord {
    Diffusion {
        fact: String,
        agent: String,
        received: bool,
        stored: bool,
        retrieved: bool,
    },
    DiffusionRate {
        fact: String,
        received: f64,
        stored: f64,
        retrieved: f64,
    },
    Interview {
        agent: String,
        phase: Phase,
        labels: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        success_rate: Option<f64>,
    },
    Affinity {
        phase: Phase,
        a: String,
        b: String,
        /// Exact value, e.g. `5/9`.
        exact: String,
        value: f64,
    },
}

fn spec_for<'a>(log: &'a RunLog, record: &InterviewRecord) -> Option<&'a InterviewSpec> {
    log.config
        .interviews
        .iter()
        .find(|s| s.agent == record.agent && s.questions == record.questions)
}

/// Diffusion for every key fact, interview outcomes, and pairwise affinity
/// between agents asked to choose among the same categories.
pub fn metrics(log: &RunLog) -> Result<Vec<MetricRecord>, CliError> {
    let mut out = Vec::new();
    if log.completed() {
        for fact in &log.config.key_facts {
            let report = diffusion_metrics(log, &fact.id)?;
            for a in &report.agents {
                out.push(MetricRecord::Diffusion {
                    fact: fact.id.clone(),
                    agent: a.agent.clone(),
                    received: a.received,
                    stored: a.stored,
                    retrieved: a.retrieved,
                });
            }
            out.push(MetricRecord::DiffusionRate {
                fact: fact.id.clone(),
                received: report.received,
                stored: report.stored,
                retrieved: report.retrieved,
            });
        }
    }

    let mut distributions = Vec::new();
    for record in &log.interviews {
        let spec = spec_for(log, record);
        let labels = record.categories();
        let target = spec.and_then(|s| s.target.clone());
        out.push(MetricRecord::Interview {
            agent: record.agent.clone(),
            phase: record.phase,
            success_rate: target.as_ref().map(|t| success_rate(&labels, t)),
            target,
            labels: labels.clone(),
        });
        if let Some(spec) = spec.filter(|s| !s.categories.is_empty()) {
            let names: Vec<String> = spec.categories.iter().map(|c| c.name.clone()).collect();
            distributions.push((record.phase, record.agent.clone(), AnswerDistribution::from_labels(&names, &labels)));
        }
    }
    for (i, (phase, a, da)) in distributions.iter().enumerate() {
        for (phase_b, b, db) in &distributions[i + 1..] {
            if phase != phase_b || a == b || da.categories != db.categories {
                continue;
            }
            let r = affinity_score(da, db)?;
            out.push(MetricRecord::Affinity {
                phase: *phase,
                a: a.clone(),
                b: b.clone(),
                exact: r.to_string(),
                value: *r.numer() as f64 / *r.denom() as f64,
            });
        }
    }
    Ok(out)
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Pre => "pre",
        Phase::Post => "post",
    }
}

/// Human-readable form of [`metrics`].
pub fn metrics_table(records: &[MetricRecord]) -> String {
    let mut out = String::new();
    let b = |x: bool| if x { "1" } else { "0" };
    let facts: BTreeSet<&str> = records
        .iter()
        .filter_map(|r| match r {
            MetricRecord::DiffusionRate { fact, .. } => Some(fact.as_str()),
            _ => None,
        })
        .collect();
    for fact in facts {
        out.push_str(&format!("diffusion of `{fact}`\n{:<20} {:>8} {:>8} {:>9}\n", "agent", "received", "stored", "retrieved"));
        for r in records {
            match r {
                MetricRecord::Diffusion {
                    fact: f,
                    agent,
                    received,
                    stored,
                    retrieved,
                } if f == fact => {
                    out.push_str(&format!("{agent:<20} {:>8} {:>8} {:>9}\n", b(*received), b(*stored), b(*retrieved)));
                }
                MetricRecord::DiffusionRate {
                    fact: f,
                    received,
                    stored,
                    retrieved,
                } if f == fact => {
                    out.push_str(&format!("{:<20} {received:>8.3} {stored:>8.3} {retrieved:>9.3}\n", "population"));
                }
                _ => {}
            }
        }
        out.push('\n');
    }

    let interviews: Vec<_> = records.iter().filter(|r| matches!(r, MetricRecord::Interview { .. })).collect();
    if !interviews.is_empty() {
        out.push_str(&format!("interviews\n{:<20} {:<5} {:<16} {:>8}  labels\n", "agent", "phase", "target", "success"));
        for r in interviews {
            if let MetricRecord::Interview {
                agent,
                phase,
                labels,
                target,
                success_rate,
            } = r
            {
                let rate = success_rate.map(|s| format!("{s:.3}")).unwrap_or_else(|| "-".into());
                out.push_str(&format!(
                    "{agent:<20} {:<5} {:<16} {rate:>8}  {}\n",
                    phase_name(*phase),
                    target.as_deref().unwrap_or("-"),
                    labels.join(", ")
                ));
            }
        }
        out.push('\n');
    }

    let affinity: Vec<_> = records.iter().filter(|r| matches!(r, MetricRecord::Affinity { .. })).collect();
    if !affinity.is_empty() {
        out.push_str(&format!("affinity\n{:<20} {:<20} {:<5} {:>8} {:>7}\n", "agent", "agent", "phase", "exact", "value"));
        for r in affinity {
            if let MetricRecord::Affinity { phase, a, b, exact, value } = r {
                out.push_str(&format!("{a:<20} {b:<20} {:<5} {exact:>8} {value:>7.3}\n", phase_name(*phase)));
            }
        }
    }
    out
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("serializable record") + "\n")
        .collect()
}

/// Interviews `agent` as restored from the run's final memdump. Without
/// `questions`, the run config's interview for that agent is used.
pub fn interview_from_run(log: &RunLog, agent: &str, questions: Vec<String>, repeats: Option<usize>) -> Result<(InterviewRecord, UsageLedger), CliError> {
    let agent = log
        .agents
        .iter()
        .map(|a| a.agent.as_str())
        .find(|a| a.eq_ignore_ascii_case(agent))
        .ok_or_else(|| ScenarioError::UnknownAgent(agent.to_string()))?;
    let (_, dump) = log
        .memdumps
        .iter()
        .find(|(a, _)| a == agent)
        .ok_or_else(|| CliError::Usage(format!("run has no memdump for `{agent}`")))?;
    let configured = log.config.interviews.iter().find(|s| s.agent == agent);
    let mut spec = if questions.is_empty() {
        configured
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("no interview configured for `{agent}`; pass --question")))?
    } else {
        InterviewSpec {
            agent: agent.to_string(),
            questions,
            categories: configured.map(|s| s.categories.clone()).unwrap_or_default(),
            target: None,
            repeats: configured.map(|s| s.repeats).unwrap_or(3),
        }
    };
    if let Some(r) = repeats {
        if r == 0 {
            return Err(CliError::Usage("--repeats must be at least 1".into()));
        }
        spec.repeats = r;
    }
    let providers = Providers::from_config(&log.config)?;
    let brain = restore_brain(&log.config, agent, dump, providers.embedder.clone())?;
    let ledger = UsageLedger::new();
    let lm = LlmClient::new(providers.language, TemplateSet::builtin(), ledger.clone());
    Ok((run_interview(&spec, &brain, &lm, Phase::Post, log.ticks_run), ledger))
}

pub fn interview_table(record: &InterviewRecord) -> String {
    let mut out = format!("interview with {}\n", record.agent);
    for r in &record.repeats {
        out.push_str(&format!("repeat {} ({} memories recalled)\n", r.repeat, r.init_memories));
        for (q, a) in record.questions.iter().zip(&r.answers) {
            out.push_str(&format!("  Q: {q}\n  A: {a}\n"));
        }
        if let Some(c) = &r.category {
            out.push_str(&format!("  category: {c}\n"));
        }
        if let Some(e) = &r.error {
            out.push_str(&format!("  invalid: {e}\n"));
        }
    }
    out
}
