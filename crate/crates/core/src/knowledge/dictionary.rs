use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    lemma: String,
    defs: Vec<String>,
}

/// Lemma → definitions, in the order they were read.
///
/// Snapshot files hold one JSON object per line, `{"lemma": .., "defs": [..]}`.
/// Blank lines and lines starting with `#` are skipped. A lemma that appears
/// on several lines accumulates all their definitions in file order.
#[derive(Clone, Debug, Default)]
pub struct DictionaryStore {
    entries: HashMap<String, Vec<String>>,
}

impl DictionaryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses snapshot text; `origin` is only used in error messages.
    pub fn parse(text: &str, origin: impl Into<PathBuf>) -> Result<Self> {
        let origin = origin.into();
        let mut store = DictionaryStore::new();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: origin.clone(),
                line: i + 1,
                msg,
            };
            let record: Record =
                serde_json::from_str(trimmed).map_err(|e| parse_err(e.to_string()))?;
            if record.lemma.trim().is_empty() {
                return Err(parse_err("empty lemma".into()));
            }
            if record.defs.is_empty() {
                return Err(parse_err(format!("no definitions for {:?}", record.lemma)));
            }
            store.insert(&record.lemma, record.defs);
        }
        Ok(store)
    }

    /// Appends definitions for `lemma` (stored lowercase).
    pub fn insert(&mut self, lemma: &str, defs: impl IntoIterator<Item = String>) {
        self.entries
            .entry(lemma.trim().to_lowercase())
            .or_default()
            .extend(defs);
    }

    pub fn lookup(&self, lemma: &str) -> Option<&[String]> {
        self.entries.get(lemma).map(Vec::as_slice)
    }

    pub fn first_definition(&self, lemma: &str) -> Option<&str> {
        self.lookup(lemma)
            .and_then(|d| d.first())
            .map(String::as_str)
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.entries.contains_key(lemma)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Serializes back to snapshot lines, sorted by lemma.
    pub fn to_snapshot(&self) -> String {
        let mut lemmas: Vec<&String> = self.entries.keys().collect();
        lemmas.sort();
        let mut out = String::new();
        for lemma in lemmas {
            let line = serde_json::json!({ "lemma": lemma, "defs": self.entries[lemma] });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}
