//! Training-data construction: corpus loading and filtering, persona
//! annotation, attribute pairs, masked-profile records and preference pairs.

mod annotate;
mod dpo;
mod esconv;
mod mask;
mod pairs;
mod stats;

pub use annotate::{annotate, annotate_corpus, AnnotatedDialogue};
pub use dpo::{build_dpo_pairs, candidate_pairs, parse_judgement, DpoOutcome, DpoPairRecord, Judgement, DEFAULT_DPO_CANDIDATES};
pub use esconv::{
    filter_by_self_disclosure, parse_corpus, self_disclosure_count, FilterOutcome, RawAnnotation, RawDialogue,
    RawUtterance, SELF_DISCLOSURE,
};
pub use mask::{build_masked_records, masked_count, MaskedProfileRecord, MASK_RANGE};
pub use pairs::{build_attribute_pairs, AttributePairRecord};
pub use stats::{corpus_stats, CorpusStats};

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("corpus is neither a JSON array nor JSON lines: {0}")]
    Corpus(String),
}

/// A dialogue or record the builder skipped, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetWarning {
    pub dialogue: usize,
    pub stage: String,
    pub message: String,
}

impl DatasetWarning {
    pub fn new(dialogue: usize, stage: &str, message: impl Into<String>) -> Self {
        let w = DatasetWarning {
            dialogue,
            stage: stage.to_string(),
            message: message.into(),
        };
        tracing::warn!(dialogue, stage, "{}", w.message);
        w
    }
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

pub fn from_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DatasetError::Json {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn export_jsonl<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn import_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, DatasetError> {
    let path = path.as_ref();
    let io = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = std::io::BufReader::new(std::fs::File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DatasetError::Json {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
