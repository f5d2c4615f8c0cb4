//! Recorded-completion playback, and the recorder that produces the files.
//!
//! A playback file holds one JSON object per line:
//! `{"template_id": "talk", "agent_id": "Marta Rodriguez", "text": "..."}`.
//! Entries are consumed in order; each agent has its own queue so replays
//! are insensitive to how agents interleave.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Generation, GenerationRequest, LangError, LanguageProvider};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackEntry {
    pub template_id: String,
    pub agent_id: String,
    pub text: String,
}

pub struct PlaybackProvider {
    queues: Mutex<BTreeMap<String, VecDeque<PlaybackEntry>>>,
    served: Mutex<usize>,
}

impl PlaybackProvider {
    pub fn new(entries: impl IntoIterator<Item = PlaybackEntry>) -> Self {
        let mut queues: BTreeMap<String, VecDeque<PlaybackEntry>> = BTreeMap::new();
        for e in entries {
            queues.entry(e.agent_id.clone()).or_default().push_back(e);
        }
        Self {
            queues: Mutex::new(queues),
            served: Mutex::new(0),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LangError> {
        let path = path.as_ref();
        let source = fs::read_to_string(path).map_err(|e| LangError::Unavailable(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (n, line) in source.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: PlaybackEntry =
                serde_json::from_str(line).map_err(|e| LangError::Unavailable(format!("{}:{}: {e}", path.display(), n + 1)))?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn remaining(&self) -> usize {
        self.queues.lock().expect("playback lock").values().map(VecDeque::len).sum()
    }
}

impl LanguageProvider for PlaybackProvider {
    fn name(&self) -> &str {
        "playback"
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation, LangError> {
        let mut served = self.served.lock().expect("playback lock");
        let mut queues = self.queues.lock().expect("playback lock");
        let queue = queues.get_mut(request.agent_id);
        let Some(entry) = queue.and_then(VecDeque::pop_front) else {
            return Err(LangError::Exhausted(*served));
        };
        if entry.template_id != request.template_id {
            return Err(LangError::PlaybackMismatch {
                expected: entry.template_id,
                found: request.template_id.to_string(),
            });
        }
        *served += 1;
        Ok(Generation::text(entry.text))
    }
}

/// Passes calls through to `inner` and keeps every successful completion
/// for later playback.
pub struct RecordingProvider {
    inner: Arc<dyn LanguageProvider>,
    recorded: Mutex<Vec<PlaybackEntry>>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn LanguageProvider>) -> Self {
        Self {
            inner,
            recorded: Mutex::new(Vec::new()),
        }
    }

    pub fn entries(&self) -> Vec<PlaybackEntry> {
        self.recorded.lock().expect("recorder lock").clone()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for e in self.recorded.lock().expect("recorder lock").iter() {
            writeln!(out, "{}", serde_json::to_string(e).expect("serializable entry"))?;
        }
        out.flush()
    }
}

impl LanguageProvider for RecordingProvider {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn context_limit(&self) -> u64 {
        self.inner.context_limit()
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation, LangError> {
        let out = self.inner.generate(request)?;
        self.recorded.lock().expect("recorder lock").push(PlaybackEntry {
            template_id: request.template_id.to_string(),
            agent_id: request.agent_id.to_string(),
            text: out.text.clone(),
        });
        Ok(out)
    }
}
