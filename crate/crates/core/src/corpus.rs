//! Artifact records and their JSON-lines corpus files.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::normalize_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Requirement,
    Buc,
    Gpr,
    TestCase,
    StandardClause,
    Other,
}

impl ArtifactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Requirement => "requirement",
            ArtifactKind::Buc => "buc",
            ArtifactKind::Gpr => "gpr",
            ArtifactKind::TestCase => "test_case",
            ArtifactKind::StandardClause => "standard_clause",
            ArtifactKind::Other => "other",
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One traceable unit of text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub id: String,
    pub kind: ArtifactKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub body: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl ArtifactRecord {
    pub fn new(id: impl Into<String>, kind: ArtifactKind, body: impl Into<String>) -> Self {
        ArtifactRecord {
            id: id.into(),
            kind,
            title: None,
            body: body.into(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    /// Text handed to the embedder: `title + " " + body` when a title exists.
    pub fn embedding_input(&self) -> String {
        match self
            .title
            .as_deref()
            .map(str::trim)
            .filter(|t| !t.is_empty())
        {
            Some(title) => format!("{title} {}", self.body),
            None => self.body.clone(),
        }
    }

    pub fn has_body(&self) -> bool {
        !normalize_text(&self.body).is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate artifact id `{0}`")]
    DuplicateArtifactId(String),
    #[error("artifact `{0}` has an empty body")]
    EmptyBody(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn parse_corpus(text: &str) -> Result<Vec<ArtifactRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ArtifactRecord =
            serde_json::from_str(line).map_err(|source| CorpusError::Json {
                line: i + 1,
                source,
            })?;
        out.push(record);
    }
    check_corpus(&out)?;
    Ok(out)
}

pub fn check_corpus(records: &[ArtifactRecord]) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(CorpusError::DuplicateArtifactId(r.id.clone()));
        }
        if !r.has_body() {
            return Err(CorpusError::EmptyBody(r.id.clone()));
        }
    }
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Vec<ArtifactRecord>, CorpusError> {
    parse_corpus(&std::fs::read_to_string(path)?)
}

pub fn corpus_to_jsonl(records: &[ArtifactRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("artifact serializes"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: &Path, records: &[ArtifactRecord]) -> Result<(), CorpusError> {
    std::fs::write(path, corpus_to_jsonl(records))?;
    Ok(())
}
