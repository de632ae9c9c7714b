use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GatewayError, PurposeTag, TranscriptKey};

/// Who produced the recorded answers, and when.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub recorded: String,
}

impl Provenance {
    pub fn new(model: impl Into<String>, recorded: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            recorded: recorded.into(),
        }
    }

    /// Provenance for transcripts produced by the scripted fixture backend.
    pub fn hand_authored() -> Self {
        Self::new("scripted-fixture-model", "2026-10-17")
    }
}

impl Default for Provenance {
    fn default() -> Self {
        Self::new("unknown", "unknown")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: TranscriptKey,
    pub purpose: PurposeTag,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    provenance: Provenance,
}

/// Frozen request-hash to answer mapping.
///
/// On disk this is JSON lines: one header line carrying the provenance, then
/// one line per entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub provenance: Provenance,
    entries: BTreeMap<TranscriptKey, TranscriptEntry>,
}

impl Transcript {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            provenance,
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, key: &TranscriptKey) -> Option<&TranscriptEntry> {
        self.entries.get(key)
    }

    /// Insert an entry. An existing key keeps its first answer.
    pub fn insert(&mut self, entry: TranscriptEntry) {
        self.entries.entry(entry.key.clone()).or_insert(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &TranscriptEntry> {
        self.entries.values()
    }

    /// Merge several transcripts; entries with the same key must agree.
    pub fn merge(&mut self, other: &Transcript) -> Result<(), GatewayError> {
        for entry in other.entries() {
            if let Some(existing) = self.entries.get(&entry.key) {
                if existing.text != entry.text {
                    return Err(GatewayError::Transcript(format!(
                        "conflicting answers for key {}",
                        entry.key
                    )));
                }
            } else {
                self.entries.insert(entry.key.clone(), entry.clone());
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = match lines.next() {
            Some(line) => serde_json::from_str(line)
                .map_err(|e| GatewayError::Transcript(format!("bad header: {e}")))?,
            None => return Ok(Transcript::default()),
        };
        let mut transcript = Transcript::new(header.provenance);
        for (i, line) in lines.enumerate() {
            let entry: TranscriptEntry = serde_json::from_str(line)
                .map_err(|e| GatewayError::Transcript(format!("entry {}: {e}", i + 1)))?;
            if let Some(existing) = transcript.entries.get(&entry.key) {
                if existing.text != entry.text {
                    return Err(GatewayError::Transcript(format!(
                        "duplicate key {} with different text",
                        entry.key
                    )));
                }
            }
            transcript.insert(entry);
        }
        Ok(transcript)
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Transcript(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn render(&self) -> String {
        let mut out = serde_json::to_string(&Header {
            provenance: self.provenance.clone(),
        })
        .expect("header serializes");
        out.push('\n');
        for entry in self.entries.values() {
            out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(path))?;
        }
        std::fs::write(path, self.render()).map_err(io_err(path))
    }

    pub fn append_entry(path: &Path, entry: &TranscriptEntry) -> Result<(), GatewayError> {
        let mut file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        let mut line = serde_json::to_string(entry).expect("entry serializes");
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(io_err(path))
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> GatewayError + '_ {
    move |e| GatewayError::Transcript(format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(key: &str, text: &str) -> TranscriptEntry {
        TranscriptEntry {
            key: TranscriptKey(key.into()),
            purpose: PurposeTag::Planning,
            text: text.into(),
        }
    }

    #[test]
    fn render_and_parse_round_trip() {
        let mut t = Transcript::new(Provenance::hand_authored());
        t.insert(entry("b", "two\nlines"));
        t.insert(entry("a", "{\"x\": 1}"));
        let parsed = Transcript::parse(&t.render()).unwrap();
        assert_eq!(parsed, t);
        assert_eq!(parsed.render(), t.render());
    }

    #[test]
    fn conflicting_duplicates_are_rejected() {
        let mut t = Transcript::new(Provenance::default());
        t.insert(entry("a", "one"));
        let mut text = t.render();
        text.push_str(&serde_json::to_string(&entry("a", "other")).unwrap());
        assert!(Transcript::parse(&text).is_err());
    }
}
