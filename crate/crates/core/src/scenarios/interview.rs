//! Interview protocol and answer categorization.

use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::config::Category;
use super::ScenarioError;
use crate::agent::{AgentBrain, Observation};
use crate::lang::LlmClient;

pub const INDECISIVE: &str = "indecisive";
pub const INTERVIEWER: &str = "Interviewer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterviewRepeat {
    pub repeat: usize,
    /// Memories used for the reflection that initializes the summary.
    pub init_memories: usize,
    pub answers: Vec<String>,
    /// False when any provider call failed.
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Category of the last answer, when categories are configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

/// One line of `interviews.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterviewRecord {
    pub agent: String,
    pub phase: Phase,
    pub questions: Vec<String>,
    pub repeats: Vec<InterviewRepeat>,
}

impl InterviewRecord {
    pub fn categories(&self) -> Vec<String> {
        self.repeats.iter().filter_map(|r| r.category.clone()).collect()
    }
}

/// Runs `repeats` independent interviews on copies of `brain`. Each repeat
/// resets volatile state, initializes the summary by reflecting on the
/// longmem items closest to the first question, then asks the questions in
/// order with a summary and memory update after each answer.
pub fn interview(brain: &AgentBrain, lm: &LlmClient, questions: &[String], repeats: usize, tick: u64) -> Vec<InterviewRepeat> {
    (0..repeats).map(|r| interview_once(brain, lm, questions, r, tick)).collect()
}

fn interview_once(base: &AgentBrain, lm: &LlmClient, questions: &[String], repeat: usize, tick: u64) -> InterviewRepeat {
    let mut b = base.clone();
    b.reset_volatile();
    let mut out = InterviewRepeat {
        repeat,
        init_memories: 0,
        answers: Vec::new(),
        valid: true,
        error: None,
        category: None,
    };
    let Some(first) = questions.first() else {
        return out;
    };
    match b.init_interview(lm, first, tick) {
        Ok(n) => out.init_memories = n,
        Err(e) => {
            out.valid = false;
            out.error = Some(e.to_string());
            return out;
        }
    }
    for (i, q) in questions.iter().enumerate() {
        b.sense(vec![Observation::utterance(INTERVIEWER, q.as_str(), tick)], tick);
        match b.answer_interview(lm, q, tick) {
            Ok(answer) => out.answers.push(answer),
            Err(e) => {
                out.valid = false;
                out.error = Some(e.to_string());
                return out;
            }
        }
        if i + 1 < questions.len() {
            if b.config().self_monitor {
                b.update_summary(lm, tick);
            } else {
                b.absorb_raw_observations(tick);
            }
        }
    }
    out
}

/// Exactly one category named → that category; none or several →
/// [`INDECISIVE`].
pub fn classify_answer(answer: &str, categories: &[Category]) -> String {
    let lower = answer.to_lowercase();
    let mut hits = categories
        .iter()
        .filter(|c| c.keywords.iter().any(|k| !k.is_empty() && lower.contains(&k.to_lowercase())));
    match (hits.next(), hits.next()) {
        (Some(c), None) => c.name.clone(),
        _ => INDECISIVE.to_string(),
    }
}

/// Fraction of labels equal to `target`; 0 for no labels.
pub fn success_rate(labels: &[String], target: &str) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|l| *l == target).count() as f64 / labels.len() as f64
}

/// Answer frequencies over categories plus indecisive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    /// Category names, without indecisive.
    pub categories: Vec<String>,
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl AnswerDistribution {
    /// Labels outside `categories` count as indecisive.
    pub fn from_labels(categories: &[String], labels: &[String]) -> Self {
        let mut counts: BTreeMap<String, u64> = categories.iter().map(|c| (c.clone(), 0)).collect();
        counts.insert(INDECISIVE.to_string(), 0);
        for l in labels {
            let key = if categories.contains(l) { l.as_str() } else { INDECISIVE };
            *counts.get_mut(key).expect("key present") += 1;
        }
        Self {
            categories: categories.to_vec(),
            counts,
            total: labels.len() as u64,
        }
    }

    pub fn probability(&self, category: &str) -> Ratio<u64> {
        if self.total == 0 {
            return Ratio::from_integer(0);
        }
        Ratio::new(self.counts.get(category).copied().unwrap_or(0), self.total)
    }

    pub fn indecisive(&self) -> Ratio<u64> {
        self.probability(INDECISIVE)
    }
}

/// Probability that two agents answering independently pick the same club.
/// Indecisive answers never agree.
pub fn affinity_score(a: &AnswerDistribution, b: &AnswerDistribution) -> Result<Ratio<u64>, ScenarioError> {
    let mut ca = a.categories.clone();
    let mut cb = b.categories.clone();
    ca.sort();
    cb.sort();
    if ca != cb {
        return Err(ScenarioError::CategoryMismatch);
    }
    Ok(a.categories
        .iter()
        .map(|c| a.probability(c) * b.probability(c))
        .fold(Ratio::from_integer(0), |acc, x| acc + x))
}
