//! Dollar cost of a usage ledger, normalized per agent per hour.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CallSite, UsageRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("hours must be positive, got {0}")]
    NonPositiveHours(f64),
    #[error("at least one agent is required")]
    NoAgents,
    #[error("prices must be non-negative")]
    NegativePrice,
}

/// Prices per 1000 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub price_per_1k_prompt_tokens: f64,
    pub price_per_1k_completion_tokens: f64,
}

impl CostModel {
    pub fn new(prompt: f64, completion: f64) -> Result<Self, CostError> {
        if prompt < 0.0 || completion < 0.0 || !prompt.is_finite() || !completion.is_finite() {
            return Err(CostError::NegativePrice);
        }
        Ok(Self {
            price_per_1k_prompt_tokens: prompt,
            price_per_1k_completion_tokens: completion,
        })
    }

    pub fn record_cost(&self, record: &UsageRecord) -> f64 {
        record.prompt_tokens as f64 / 1000.0 * self.price_per_1k_prompt_tokens
            + record.completion_tokens as f64 / 1000.0 * self.price_per_1k_completion_tokens
    }
}

impl Default for CostModel {
    /// GPT-3.5-turbo list prices at the time agents like these were first run.
    fn default() -> Self {
        Self {
            price_per_1k_prompt_tokens: 0.0015,
            price_per_1k_completion_tokens: 0.002,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SiteCost {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub dollars: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub total_calls: u64,
    pub total_dollars: f64,
    pub n_agents: u64,
    pub hours: f64,
    pub per_agent_per_hour: f64,
    pub by_site: BTreeMap<CallSite, SiteCost>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl CostReport {
    /// Sum of the per-site dollar amounts.
    pub fn breakdown_total(&self) -> f64 {
        self.by_site.values().map(|s| s.dollars).sum()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>8} {:>14} {:>14} {:>12}\n",
            "call site", "calls", "prompt tok", "completion tok", "dollars"
        ));
        for (site, c) in &self.by_site {
            out.push_str(&format!(
                "{:<12} {:>8} {:>14} {:>14} {:>12.6}\n",
                site.as_str(),
                c.calls,
                c.prompt_tokens,
                c.completion_tokens,
                c.dollars
            ));
        }
        out.push_str(&format!(
            "{:<12} {:>8} {:>14} {:>14} {:>12.6}\n",
            "total", self.total_calls, "", "", self.total_dollars
        ));
        out.push_str(&format!(
            "cost per agent per hour: {:.6} ({} agents, {:.4} h)\n",
            self.per_agent_per_hour, self.n_agents, self.hours
        ));
        if let Some(w) = &self.warning {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

/// `total / n_agents / hours`.
pub fn per_agent_per_hour(total_dollars: f64, n_agents: u64, hours: f64) -> Result<f64, CostError> {
    if n_agents == 0 {
        return Err(CostError::NoAgents);
    }
    if !(hours > 0.0) {
        return Err(CostError::NonPositiveHours(hours));
    }
    Ok(total_dollars / n_agents as f64 / hours)
}

/// Converts a per-game-hour figure to per-human-hour when the game clock
/// runs `game_speed` times faster than wall time.
pub fn to_human_hours(per_game_hour: f64, game_speed: f64) -> f64 {
    per_game_hour * game_speed
}

pub fn cost_report(ledger: &[UsageRecord], model: &CostModel, hours: f64, n_agents: u64) -> Result<CostReport, CostError> {
    if n_agents == 0 {
        return Err(CostError::NoAgents);
    }
    if !(hours > 0.0) {
        return Err(CostError::NonPositiveHours(hours));
    }
    let mut by_site: BTreeMap<CallSite, SiteCost> = BTreeMap::new();
    let mut total = 0.0;
    for record in ledger {
        let dollars = model.record_cost(record);
        total += dollars;
        let site = by_site.entry(record.call_site).or_default();
        site.calls += 1;
        site.prompt_tokens += record.prompt_tokens;
        site.completion_tokens += record.completion_tokens;
        site.dollars += dollars;
    }
    let warning = if ledger.is_empty() {
        tracing::warn!("cost report over an empty ledger");
        Some("empty ledger".to_string())
    } else {
        None
    };
    Ok(CostReport {
        total_calls: ledger.len() as u64,
        total_dollars: total,
        n_agents,
        hours,
        per_agent_per_hour: per_agent_per_hour(total, n_agents, hours)?,
        by_site,
        warning,
    })
}
