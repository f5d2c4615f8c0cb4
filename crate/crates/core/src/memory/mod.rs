//! Summarize-and-Forget memory.
//!
//! Three tiers: `workmem` holds the last few observations, `recentmem`
//! receives split self-monitor summaries and reflections, and `longmem` is
//! the enduring store. Insertion into `recentmem` and `longmem` runs the
//! θ-forgetting rule; moving from `recentmem` to `longmem` runs
//! cluster-then-summarize first.

mod cluster;
mod dump;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, embed, tokenize, EmbeddingError, EmbeddingProvider, EmbeddingVector};

pub use cluster::{cluster_by_similarity, cluster_indices, summarize_cluster, ClusterSummarizer, SummarizeOutcome};
pub use dump::{read_memdump, write_memdump, MemdumpHeader, MemdumpRecord, Tier, MEMDUMP_FORMAT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("memory text is empty")]
    EmptyText,
    #[error("retrieval query is empty")]
    EmptyQuery,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("forget threshold must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
    #[error("capacity must be positive")]
    ZeroCapacity,
    #[error("workmem capacity must be 4 or 5, got {0}")]
    InvalidWorkmemCapacity(usize),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("memdump: {0}")]
    Dump(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MemoryId(pub u64);

impl fmt::Display for MemoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemorySource {
    Seeded,
    Summary,
    Reflection,
    Consolidated,
    /// Raw buffered observation; only used when the self-monitor is ablated.
    Observation,
}

impl MemorySource {
    pub fn as_str(self) -> &'static str {
        match self {
            MemorySource::Seeded => "seeded",
            MemorySource::Summary => "summary",
            MemorySource::Reflection => "reflection",
            MemorySource::Consolidated => "consolidated",
            MemorySource::Observation => "observation",
        }
    }
}

/// A string-embedding pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryItem {
    pub id: MemoryId,
    pub text: String,
    pub embedding: EmbeddingVector,
    pub created_tick: u64,
    pub source: MemorySource,
}

impl MemoryItem {
    pub fn new(
        provider: &dyn EmbeddingProvider,
        id: MemoryId,
        text: impl Into<String>,
        created_tick: u64,
        source: MemorySource,
    ) -> Result<Self, MemoryError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(MemoryError::EmptyText);
        }
        let embedding = embed(provider, &text)?;
        Ok(Self {
            id,
            text,
            embedding,
            created_tick,
            source,
        })
    }
}

/// Ordered list of memory items with the θ-forgetting rule.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    items: Vec<MemoryItem>,
    capacity: Option<usize>,
    forget_threshold: f64,
    forgetting: bool,
}

impl MemoryBank {
    pub fn new(capacity: Option<usize>, forget_threshold: f64) -> Result<Self, MemoryError> {
        if capacity == Some(0) {
            return Err(MemoryError::ZeroCapacity);
        }
        if !(forget_threshold > 0.0 && forget_threshold < 1.0) {
            return Err(MemoryError::InvalidThreshold(forget_threshold));
        }
        Ok(Self {
            items: Vec::new(),
            capacity,
            forget_threshold,
            forgetting: true,
        })
    }

    pub fn unlimited(forget_threshold: f64) -> Result<Self, MemoryError> {
        Self::new(None, forget_threshold)
    }

    pub fn with_forgetting(mut self, on: bool) -> Self {
        self.forgetting = on;
        self
    }

    pub fn set_forgetting(&mut self, on: bool) {
        self.forgetting = on;
    }

    pub fn forgetting(&self) -> bool {
        self.forgetting
    }

    pub fn forget_threshold(&self) -> f64 {
        self.forget_threshold
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn items(&self) -> &[MemoryItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.items.first().map(|i| i.embedding.dimension())
    }

    /// Stores `item`, evicting every older item more similar to it than θ,
    /// then the oldest items while over capacity. Returns what was evicted,
    /// in eviction order.
    pub fn add_with_forgetting(&mut self, item: MemoryItem) -> Result<Vec<MemoryItem>, MemoryError> {
        if let Some(dim) = self.dimension() {
            if dim != item.embedding.dimension() {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: dim,
                    found: item.embedding.dimension(),
                }
                .into());
            }
        }
        let mut evicted = Vec::new();
        if self.forgetting {
            let mut kept = Vec::with_capacity(self.items.len() + 1);
            for old in self.items.drain(..) {
                if cosine_similarity(&old.embedding, &item.embedding)? > self.forget_threshold {
                    evicted.push(old);
                } else {
                    kept.push(old);
                }
            }
            self.items = kept;
        }
        self.items.push(item);
        if let Some(cap) = self.capacity {
            while self.items.len() > cap {
                evicted.push(self.items.remove(0));
            }
        }
        Ok(evicted)
    }

    /// Top `k` items by cosine similarity to `query`; ties go to the newer item.
    pub fn retrieve_by_vector(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<MemoryItem>, MemoryError> {
        if k == 0 {
            return Err(MemoryError::ZeroK);
        }
        let mut scored = Vec::with_capacity(self.items.len());
        for (index, item) in self.items.iter().enumerate() {
            scored.push((cosine_similarity(query, &item.embedding)?, index));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
        Ok(scored.into_iter().take(k).map(|(_, i)| self.items[i].clone()).collect())
    }

    pub fn retrieve(&self, provider: &dyn EmbeddingProvider, query: &str, k: usize) -> Result<Vec<MemoryItem>, MemoryError> {
        if query.trim().is_empty() {
            return Err(MemoryError::EmptyQuery);
        }
        if k == 0 {
            return Err(MemoryError::ZeroK);
        }
        if self.items.is_empty() {
            return Ok(Vec::new());
        }
        let q = embed(provider, query)?;
        self.retrieve_by_vector(&q, k)
    }

    /// Appends without forgetting or capacity checks. Used for lossless
    /// seeding and for restoring dumps.
    pub(crate) fn push_unchecked(&mut self, item: MemoryItem) {
        self.items.push(item);
    }

    pub fn drain(&mut self) -> Vec<MemoryItem> {
        std::mem::take(&mut self.items)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub workmem_capacity: usize,
    pub recent_capacity: usize,
    pub recent_forget_threshold: f64,
    pub long_forget_threshold: f64,
    pub link_threshold: f64,
    /// Single bank, no forgetting, no summarizing.
    pub flat: bool,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            workmem_capacity: 5,
            recent_capacity: 20,
            recent_forget_threshold: 0.9,
            long_forget_threshold: 0.9,
            link_threshold: 0.8,
            flat: false,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<(), MemoryError> {
        if !(4..=5).contains(&self.workmem_capacity) {
            return Err(MemoryError::InvalidWorkmemCapacity(self.workmem_capacity));
        }
        if self.recent_capacity == 0 {
            return Err(MemoryError::ZeroCapacity);
        }
        for t in [self.recent_forget_threshold, self.long_forget_threshold, self.link_threshold] {
            if !(t > 0.0 && t < 1.0) {
                return Err(MemoryError::InvalidThreshold(t));
            }
        }
        Ok(())
    }
}

/// What one consolidation did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConsolidationReport {
    /// Items inserted into longmem.
    pub moved: usize,
    pub clusters: usize,
    pub llm_calls: usize,
    /// Clusters whose summary failed and moved verbatim.
    pub retained_clusters: usize,
    /// longmem items evicted by forgetting during the move.
    pub evicted: Vec<MemoryItem>,
}

/// workmem → recentmem → longmem, owned by one agent.
#[derive(Clone)]
pub struct MemoryHierarchy {
    config: MemoryConfig,
    embedder: Arc<dyn EmbeddingProvider>,
    workmem: MemoryBank,
    recentmem: MemoryBank,
    longmem: MemoryBank,
    next_id: u64,
}

impl fmt::Debug for MemoryHierarchy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryHierarchy")
            .field("config", &self.config)
            .field("embedder", &self.embedder.name())
            .field("workmem", &self.workmem.len())
            .field("recentmem", &self.recentmem.len())
            .field("longmem", &self.longmem.len())
            .finish()
    }
}

impl MemoryHierarchy {
    pub fn new(config: MemoryConfig, embedder: Arc<dyn EmbeddingProvider>) -> Result<Self, MemoryError> {
        config.validate()?;
        let workmem = MemoryBank::new(Some(config.workmem_capacity), config.recent_forget_threshold)?.with_forgetting(false);
        let (recentmem, longmem) = if config.flat {
            (
                MemoryBank::unlimited(config.recent_forget_threshold)?.with_forgetting(false),
                MemoryBank::unlimited(config.long_forget_threshold)?.with_forgetting(false),
            )
        } else {
            (
                MemoryBank::unlimited(config.recent_forget_threshold)?,
                MemoryBank::unlimited(config.long_forget_threshold)?,
            )
        };
        Ok(Self {
            config,
            embedder,
            workmem,
            recentmem,
            longmem,
            next_id: 0,
        })
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn embedder(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.embedder
    }

    pub fn is_flat(&self) -> bool {
        self.config.flat
    }

    pub fn workmem(&self) -> &MemoryBank {
        &self.workmem
    }

    pub fn recentmem(&self) -> &MemoryBank {
        &self.recentmem
    }

    pub fn longmem(&self) -> &MemoryBank {
        &self.longmem
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    fn item(&mut self, text: &str, tick: u64, source: MemorySource) -> Result<MemoryItem, MemoryError> {
        let id = MemoryId(self.next_id);
        let item = MemoryItem::new(self.embedder.as_ref(), id, text, tick, source)?;
        self.next_id += 1;
        Ok(item)
    }

    /// Lossless seeding into longmem (forgetting off).
    pub fn seed_long(&mut self, text: &str, tick: u64) -> Result<MemoryId, MemoryError> {
        let item = self.item(text, tick, MemorySource::Seeded)?;
        let id = item.id;
        self.longmem.push_unchecked(item);
        Ok(id)
    }

    /// Lossless seeding into recentmem, or the single bank when flat.
    pub fn seed_recent(&mut self, text: &str, tick: u64) -> Result<MemoryId, MemoryError> {
        let item = self.item(text, tick, MemorySource::Seeded)?;
        let id = item.id;
        self.store_bank_mut().push_unchecked(item);
        Ok(id)
    }

    /// Mirrors an admitted observation into workmem (oldest drops out).
    pub fn observe(&mut self, text: &str, tick: u64) -> Result<(), MemoryError> {
        let item = self.item(text, tick, MemorySource::Observation)?;
        self.workmem.add_with_forgetting(item)?;
        Ok(())
    }

    fn store_bank_mut(&mut self) -> &mut MemoryBank {
        if self.config.flat {
            &mut self.longmem
        } else {
            &mut self.recentmem
        }
    }

    /// Inserts into recentmem with forgetting; in flat mode appends to the
    /// single bank. Returns evicted items.
    pub fn add_recent(&mut self, text: &str, source: MemorySource, tick: u64) -> Result<Vec<MemoryItem>, MemoryError> {
        let item = self.item(text, tick, source)?;
        self.store_bank_mut().add_with_forgetting(item)
    }

    pub fn needs_consolidation(&self) -> bool {
        !self.config.flat && self.recentmem.len() >= self.config.recent_capacity
    }

    /// Runs consolidation when recentmem has reached capacity.
    pub fn consolidate(&mut self, summarizer: &dyn ClusterSummarizer, tick: u64) -> Result<ConsolidationReport, MemoryError> {
        if !self.needs_consolidation() {
            return Ok(ConsolidationReport::default());
        }
        self.consolidate_now(summarizer, tick)
    }

    /// Empties recentmem into longmem regardless of fill level:
    /// cluster, summarize each cluster, then insert with forgetting.
    pub fn consolidate_now(&mut self, summarizer: &dyn ClusterSummarizer, tick: u64) -> Result<ConsolidationReport, MemoryError> {
        let mut report = ConsolidationReport::default();
        if self.config.flat || self.recentmem.is_empty() {
            return Ok(report);
        }
        let items = self.recentmem.drain();
        let clusters = cluster_by_similarity(&items, self.config.link_threshold)?;
        report.clusters = clusters.len();
        for cluster in clusters {
            let id = MemoryId(self.next_id);
            let outcome = summarize_cluster(cluster, summarizer, self.embedder.as_ref(), id, tick);
            if outcome.called_llm() {
                report.llm_calls += 1;
            }
            let moved = match outcome {
                SummarizeOutcome::PassThrough(item) => vec![item],
                SummarizeOutcome::Summarized(item) => {
                    self.next_id += 1;
                    vec![item]
                }
                SummarizeOutcome::Retained(items) => {
                    report.retained_clusters += 1;
                    items
                }
            };
            for item in moved {
                report.evicted.extend(self.longmem.add_with_forgetting(item)?);
                report.moved += 1;
            }
        }
        Ok(report)
    }

    /// Retrieval for action prompts: `k_long` from longmem and `k_recent`
    /// from recentmem. In flat mode all `k_long + k_recent` come from the
    /// single bank.
    pub fn retrieve(&self, query: &str, k_long: usize, k_recent: usize) -> Result<Vec<MemoryItem>, MemoryError> {
        if query.trim().is_empty() {
            return Err(MemoryError::EmptyQuery);
        }
        let q = embed(self.embedder.as_ref(), query)?;
        if self.config.flat {
            let k = k_long + k_recent;
            return if k == 0 || self.longmem.is_empty() {
                Ok(Vec::new())
            } else {
                self.longmem.retrieve_by_vector(&q, k)
            };
        }
        let mut out = Vec::new();
        if k_long > 0 && !self.longmem.is_empty() {
            out.extend(self.longmem.retrieve_by_vector(&q, k_long)?);
        }
        if k_recent > 0 && !self.recentmem.is_empty() {
            out.extend(self.recentmem.retrieve_by_vector(&q, k_recent)?);
        }
        Ok(out)
    }

    pub fn retrieve_long(&self, query: &str, k: usize) -> Result<Vec<MemoryItem>, MemoryError> {
        self.longmem.retrieve(self.embedder.as_ref(), query, k)
    }

    /// Every recentmem and longmem item; what a memdump contains.
    pub fn stored_items(&self) -> impl Iterator<Item = &MemoryItem> {
        self.recentmem.items().iter().chain(self.longmem.items())
    }

    /// Rebuilds a hierarchy from dumped banks.
    pub(crate) fn from_parts(
        config: MemoryConfig,
        embedder: Arc<dyn EmbeddingProvider>,
        recent: Vec<MemoryItem>,
        long: Vec<MemoryItem>,
        next_id: u64,
    ) -> Result<Self, MemoryError> {
        let mut h = Self::new(config, embedder)?;
        for item in recent {
            h.recentmem.push_unchecked(item);
        }
        for item in long {
            h.longmem.push_unchecked(item);
        }
        h.next_id = next_id;
        Ok(h)
    }
}

/// Splits a self-monitor summary into sentences on `.`, `!` and `?`,
/// dropping fragments of fewer than three tokens.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace()) {
            push_sentence(&mut out, &current);
            current.clear();
        }
    }
    push_sentence(&mut out, &current);
    out
}

fn push_sentence(out: &mut Vec<String>, fragment: &str) {
    let s = fragment.trim();
    if tokenize(s).len() >= 3 {
        out.push(s.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashedBagOfTokens;

    fn provider() -> Arc<dyn EmbeddingProvider> {
        Arc::new(HashedBagOfTokens::default())
    }

    fn item(p: &dyn EmbeddingProvider, id: u64, text: &str) -> MemoryItem {
        MemoryItem::new(p, MemoryId(id), text, id, MemorySource::Summary).unwrap()
    }

    fn vec_item(id: u64, values: Vec<f64>) -> MemoryItem {
        MemoryItem {
            id: MemoryId(id),
            text: format!("item {id}"),
            embedding: EmbeddingVector::new(values).unwrap(),
            created_tick: id,
            source: MemorySource::Summary,
        }
    }

    #[test]
    fn duplicate_insert_evicts_the_older_copy() {
        let p = provider();
        let mut bank = MemoryBank::unlimited(0.9).unwrap();
        assert!(bank.add_with_forgetting(item(p.as_ref(), 0, "the hotel is quiet")).unwrap().is_empty());
        let evicted = bank.add_with_forgetting(item(p.as_ref(), 1, "the hotel is quiet")).unwrap();
        assert_eq!(evicted.len(), 1);
        assert_eq!(evicted[0].id, MemoryId(0));
        assert_eq!(bank.items()[0].id, MemoryId(1));
    }

    #[test]
    fn orthogonal_items_coexist() {
        let mut bank = MemoryBank::unlimited(0.9).unwrap();
        bank.add_with_forgetting(vec_item(0, vec![1.0, 0.0])).unwrap();
        assert!(bank.add_with_forgetting(vec_item(1, vec![0.0, 1.0])).unwrap().is_empty());
        assert_eq!(bank.len(), 2);
    }

    #[test]
    fn capacity_evicts_oldest_after_forgetting() {
        let mut bank = MemoryBank::new(Some(2), 0.9).unwrap();
        bank.add_with_forgetting(vec_item(0, vec![1.0, 0.0, 0.0])).unwrap();
        bank.add_with_forgetting(vec_item(1, vec![0.0, 1.0, 0.0])).unwrap();
        let evicted = bank.add_with_forgetting(vec_item(2, vec![0.0, 0.0, 1.0])).unwrap();
        assert_eq!(evicted.iter().map(|i| i.id.0).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut bank = MemoryBank::unlimited(0.9).unwrap();
        bank.add_with_forgetting(vec_item(0, vec![1.0, 0.0])).unwrap();
        assert!(matches!(
            bank.add_with_forgetting(vec_item(1, vec![1.0, 0.0, 0.0])),
            Err(MemoryError::Embedding(EmbeddingError::DimensionMismatch { .. }))
        ));
    }

    #[test]
    fn invalid_thresholds() {
        assert_eq!(MemoryBank::unlimited(1.0).unwrap_err(), MemoryError::InvalidThreshold(1.0));
        assert_eq!(MemoryBank::unlimited(0.0).unwrap_err(), MemoryError::InvalidThreshold(0.0));
        assert_eq!(MemoryBank::new(Some(0), 0.5).unwrap_err(), MemoryError::ZeroCapacity);
    }

    #[test]
    fn retrieval_orders_by_similarity_then_recency() {
        let p = provider();
        let mut bank = MemoryBank::unlimited(0.9).unwrap().with_forgetting(false);
        assert!(bank.retrieve(p.as_ref(), "anything", 3).unwrap().is_empty());
        bank.add_with_forgetting(item(p.as_ref(), 0, "the ramen shop was closed")).unwrap();
        bank.add_with_forgetting(item(p.as_ref(), 1, "Ahmed Khan stays in room 203")).unwrap();
        bank.add_with_forgetting(item(p.as_ref(), 2, "the ramen shop was closed")).unwrap();
        let top = bank.retrieve(p.as_ref(), "Ahmed Khan stays in room 203", 1).unwrap();
        assert_eq!(top[0].id, MemoryId(1));
        let ramen = bank.retrieve(p.as_ref(), "the ramen shop was closed", 2).unwrap();
        assert_eq!(ramen.iter().map(|i| i.id.0).collect::<Vec<_>>(), vec![2, 0]);
        assert_eq!(bank.retrieve(p.as_ref(), "  ", 1).unwrap_err(), MemoryError::EmptyQuery);
        assert_eq!(bank.retrieve(p.as_ref(), "x", 0).unwrap_err(), MemoryError::ZeroK);
    }

    #[test]
    fn sentence_splitting_drops_short_fragments() {
        let s = split_sentences("I saw Francesco near the hotel. Odd! Was he carrying something? Maybe a knife");
        assert_eq!(
            s,
            vec!["I saw Francesco near the hotel.", "Was he carrying something?", "Maybe a knife"]
        );
        assert!(split_sentences("Room 203. Mr. Khan left").is_empty());
        assert!(split_sentences("").is_empty());
    }

    #[test]
    fn flat_hierarchy_keeps_everything() {
        let config = MemoryConfig {
            flat: true,
            ..MemoryConfig::default()
        };
        let mut h = MemoryHierarchy::new(config, provider()).unwrap();
        for _ in 0..30 {
            assert!(h.add_recent("the same thought again", MemorySource::Summary, 0).unwrap().is_empty());
        }
        assert_eq!(h.longmem().len(), 30);
        assert!(h.recentmem().is_empty());
        assert!(!h.needs_consolidation());
    }

    #[test]
    fn workmem_config_is_bounded() {
        let bad = MemoryConfig {
            workmem_capacity: 6,
            ..MemoryConfig::default()
        };
        assert_eq!(MemoryHierarchy::new(bad, provider()).unwrap_err(), MemoryError::InvalidWorkmemCapacity(6));
        let mut h = MemoryHierarchy::new(MemoryConfig::default(), provider()).unwrap();
        for i in 0..8 {
            h.observe(&format!("observation number {i}"), i).unwrap();
        }
        assert_eq!(h.workmem().len(), 5);
        assert_eq!(h.workmem().items()[0].text, "observation number 3");
    }
}
