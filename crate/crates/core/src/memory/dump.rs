//! `memdump v1`: line-delimited JSON dump of an agent's recentmem and
//! longmem.
//!
//! The first line is a header:
//! `{"format":"memdump v1","agent":"...","provider":"...","dimension":256,"flat":false,"next_id":42}`.
//! Every following line is one item:
//! `{"tier":"long","id":3,"source":"seeded","created_tick":0,"text":"...","embedding":"<base64 f64 LE>"}`.
//! Items appear in bank order, recentmem first.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{MemoryConfig, MemoryError, MemoryHierarchy, MemoryId, MemoryItem, MemorySource};
use crate::embedding::{EmbeddingProvider, EmbeddingVector};

pub const MEMDUMP_FORMAT: &str = "memdump v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Recent,
    Long,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemdumpHeader {
    pub format: String,
    pub agent: String,
    pub provider: String,
    pub dimension: usize,
    pub flat: bool,
    pub next_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemdumpRecord {
    pub tier: Tier,
    pub id: u64,
    pub source: MemorySource,
    pub created_tick: u64,
    pub text: String,
    pub embedding: String,
}

impl MemdumpRecord {
    fn from_item(tier: Tier, item: &MemoryItem) -> Self {
        Self {
            tier,
            id: item.id.0,
            source: item.source,
            created_tick: item.created_tick,
            text: item.text.clone(),
            embedding: item.embedding.to_base64(),
        }
    }
}

pub fn write_memdump(h: &MemoryHierarchy, agent: &str) -> String {
    let header = MemdumpHeader {
        format: MEMDUMP_FORMAT.to_string(),
        agent: agent.to_string(),
        provider: h.embedder().name().to_string(),
        dimension: h.embedder().dimension(),
        flat: h.is_flat(),
        next_id: h.next_id(),
    };
    let mut out = serde_json::to_string(&header).expect("serializable header");
    out.push('\n');
    let tiers = [(Tier::Recent, h.recentmem().items()), (Tier::Long, h.longmem().items())];
    for (tier, items) in tiers {
        for item in items {
            out.push_str(&serde_json::to_string(&MemdumpRecord::from_item(tier, item)).expect("serializable record"));
            out.push('\n');
        }
    }
    out
}

/// Parses a dump and rebuilds the hierarchy with `config`; the `flat` flag
/// from the header wins over the config.
pub fn read_memdump(
    source: &str,
    config: MemoryConfig,
    embedder: Arc<dyn EmbeddingProvider>,
) -> Result<(MemdumpHeader, MemoryHierarchy), MemoryError> {
    let mut lines = source.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| MemoryError::Dump("empty memdump".into()))?;
    let header: MemdumpHeader = serde_json::from_str(first).map_err(|e| MemoryError::Dump(format!("line 1: {e}")))?;
    if header.format != MEMDUMP_FORMAT {
        return Err(MemoryError::Dump(format!("unsupported format `{}`", header.format)));
    }
    if header.dimension != embedder.dimension() {
        return Err(MemoryError::Dump(format!(
            "dump dimension {} does not match provider dimension {}",
            header.dimension,
            embedder.dimension()
        )));
    }
    let (mut recent, mut long) = (Vec::new(), Vec::new());
    for (n, line) in lines {
        let r: MemdumpRecord = serde_json::from_str(line).map_err(|e| MemoryError::Dump(format!("line {}: {e}", n + 1)))?;
        let embedding = EmbeddingVector::from_base64(&r.embedding)?;
        if embedding.dimension() != header.dimension {
            return Err(MemoryError::Dump(format!("line {}: wrong embedding dimension", n + 1)));
        }
        let item = MemoryItem {
            id: MemoryId(r.id),
            text: r.text,
            embedding,
            created_tick: r.created_tick,
            source: r.source,
        };
        match r.tier {
            Tier::Recent => recent.push(item),
            Tier::Long => long.push(item),
        }
    }
    let config = MemoryConfig {
        flat: header.flat,
        ..config
    };
    let h = MemoryHierarchy::from_parts(config, embedder, recent, long, header.next_id)?;
    Ok((header, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashedBagOfTokens;

    #[test]
    fn round_trip_is_byte_identical() {
        let p: Arc<dyn EmbeddingProvider> = Arc::new(HashedBagOfTokens::default());
        let mut h = MemoryHierarchy::new(MemoryConfig::default(), p.clone()).unwrap();
        h.seed_long("Ahmed Khan stays in room 203 of the hotel.", 0).unwrap();
        h.seed_recent("Ahmed Khan was murdered yesterday.", 0).unwrap();
        h.add_recent("I should talk to Lizhi about the knife.", MemorySource::Reflection, 12).unwrap();
        let text = write_memdump(&h, "Marta Rodriguez");
        let (header, restored) = read_memdump(&text, MemoryConfig::default(), p).unwrap();
        assert_eq!(header.agent, "Marta Rodriguez");
        assert_eq!(restored.longmem().len(), 1);
        assert_eq!(restored.recentmem().len(), 2);
        assert_eq!(restored.next_id(), 3);
        assert_eq!(write_memdump(&restored, "Marta Rodriguez"), text);
    }

    #[test]
    fn rejects_foreign_formats_and_dimensions() {
        let p: Arc<dyn EmbeddingProvider> = Arc::new(HashedBagOfTokens::default());
        assert!(read_memdump("", MemoryConfig::default(), p.clone()).is_err());
        let bad = r#"{"format":"memdump v2","agent":"a","provider":"x","dimension":256,"flat":false,"next_id":0}"#;
        assert!(read_memdump(bad, MemoryConfig::default(), p.clone()).is_err());
        let small = r#"{"format":"memdump v1","agent":"a","provider":"x","dimension":8,"flat":false,"next_id":0}"#;
        assert!(read_memdump(small, MemoryConfig::default(), p).is_err());
    }
}
