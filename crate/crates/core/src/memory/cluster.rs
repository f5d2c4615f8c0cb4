//! Single-linkage clustering and the LLM summarization of clusters.

use petgraph::unionfind::UnionFind;

use super::{MemoryError, MemoryId, MemoryItem, MemorySource};
use crate::embedding::{cosine_similarity, EmbeddingProvider, EmbeddingVector};

/// Connected components of the graph with an edge wherever
/// `sim > link_threshold`. Clusters are ordered by their first member and
/// members keep input order.
pub fn cluster_indices(vectors: &[&EmbeddingVector], link_threshold: f64) -> Result<Vec<Vec<usize>>, MemoryError> {
    let n = vectors.len();
    let mut uf = UnionFind::<usize>::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if cosine_similarity(vectors[i], vectors[j])? > link_threshold {
                uf.union(i, j);
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut slot_of_root = vec![usize::MAX; n];
    for i in 0..n {
        let root = uf.find(i);
        if slot_of_root[root] == usize::MAX {
            slot_of_root[root] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[slot_of_root[root]].push(i);
    }
    Ok(clusters)
}

pub fn cluster_by_similarity(items: &[MemoryItem], link_threshold: f64) -> Result<Vec<Vec<MemoryItem>>, MemoryError> {
    let vectors: Vec<&EmbeddingVector> = items.iter().map(|i| &i.embedding).collect();
    Ok(cluster_indices(&vectors, link_threshold)?
        .into_iter()
        .map(|c| c.into_iter().map(|i| items[i].clone()).collect())
        .collect())
}

/// Turns the texts of one cluster into a single summary. The LLM adapter
/// lives with the agent; tests plug in fixtures.
pub trait ClusterSummarizer {
    fn summarize(&self, texts: &[&str]) -> Result<String, String>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum SummarizeOutcome {
    /// Singleton cluster, moved unchanged without an LLM call.
    PassThrough(MemoryItem),
    Summarized(MemoryItem),
    /// The summarizer failed; the members move as they are.
    Retained(Vec<MemoryItem>),
}

impl SummarizeOutcome {
    pub fn called_llm(&self) -> bool {
        !matches!(self, SummarizeOutcome::PassThrough(_))
    }
}

pub fn summarize_cluster(
    mut cluster: Vec<MemoryItem>,
    summarizer: &dyn ClusterSummarizer,
    embedder: &dyn EmbeddingProvider,
    id: MemoryId,
    tick: u64,
) -> SummarizeOutcome {
    if cluster.len() == 1 {
        return SummarizeOutcome::PassThrough(cluster.pop().expect("one item"));
    }
    let texts: Vec<&str> = cluster.iter().map(|i| i.text.as_str()).collect();
    let summary = summarizer
        .summarize(&texts)
        .and_then(|text| MemoryItem::new(embedder, id, text.trim(), tick, MemorySource::Consolidated).map_err(|e| e.to_string()));
    match summary {
        Ok(item) => SummarizeOutcome::Summarized(item),
        Err(e) => {
            tracing::warn!(error = %e, size = cluster.len(), "cluster summary failed; keeping members");
            SummarizeOutcome::Retained(cluster)
        }
    }
}
