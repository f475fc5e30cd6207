//! Prompt datasets stored as JSON lines.
//!
//! Each line is an object with a `prompt` (or `question`, `problem`) string
//! and an optional reference `answer`; other fields are ignored.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: empty prompt")]
    EmptyPrompt { line: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    #[serde(alias = "question", alias = "problem")]
    pub prompt: String,
    #[serde(default, alias = "reference", skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self, DatasetError> {
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(raw).map_err(|e| DatasetError::Parse {
                line,
                message: e.to_string(),
            })?;
            if rec.prompt.trim().is_empty() {
                return Err(DatasetError::EmptyPrompt { line });
            }
            records.push(rec);
        }
        Ok(Self {
            name: name.into(),
            records,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(name, &std::fs::read_to_string(path)?)
    }

    /// A dataset of `count` copies of one reference-free prompt.
    pub fn repeated(name: impl Into<String>, prompt: &str, count: usize) -> Self {
        Self {
            name: name.into(),
            records: vec![
                Record {
                    prompt: prompt.to_string(),
                    answer: None,
                };
                count
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn truncate(&mut self, limit: usize) {
        self.records.truncate(limit);
    }
}
