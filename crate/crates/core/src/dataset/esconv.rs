use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetWarning};
use crate::persona::{DialogueHistory, PersonaError, Role};

pub const SELF_DISCLOSURE: &str = "Self-disclosure";

/// One dialogue in ESConv's JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDialogue {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub situation: Option<String>,
    pub dialog: Vec<RawUtterance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawUtterance {
    pub speaker: String,
    pub content: String,
    #[serde(default)]
    pub annotation: RawAnnotation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
}

fn speaker_role(speaker: &str) -> Option<Role> {
    match speaker.trim().to_ascii_lowercase().as_str() {
        "seeker" | "usr" | "user" => Some(Role::User),
        "supporter" | "sys" | "system" | "agent" => Some(Role::Agent),
        _ => None,
    }
}

fn is_self_disclosure(strategy: &str) -> bool {
    let key: String = strategy.chars().filter(|c| c.is_alphanumeric()).collect();
    key.eq_ignore_ascii_case("selfdisclosure")
}

/// Accepts a JSON array of dialogues or one dialogue per line.
pub fn parse_corpus(text: &str) -> Result<Vec<RawDialogue>, DatasetError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| DatasetError::Corpus(e.to_string()));
    }
    super::from_jsonl(text)
}

/// Number of supporter utterances labelled self-disclosure, or `None` when
/// the dialogue carries no strategy labels at all.
pub fn self_disclosure_count(dialogue: &RawDialogue) -> Option<usize> {
    let labels: Vec<&str> = dialogue
        .dialog
        .iter()
        .filter_map(|u| u.annotation.strategy.as_deref())
        .collect();
    if labels.is_empty() {
        return None;
    }
    Some(labels.into_iter().filter(|s| is_self_disclosure(s)).count())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    /// Indices of kept dialogues, ascending.
    pub kept: Vec<usize>,
    pub warnings: Vec<DatasetWarning>,
}

/// Keeps dialogues whose supporter used self-disclosure more than twice.
pub fn filter_by_self_disclosure(dialogues: &[RawDialogue]) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for (i, d) in dialogues.iter().enumerate() {
        match self_disclosure_count(d) {
            Some(n) if n > 2 => out.kept.push(i),
            Some(_) => {}
            None => out.warnings.push(DatasetWarning::new(i, "filter", "no strategy labels; excluded")),
        }
    }
    out
}

impl RawDialogue {
    /// Converts to an alternating history. Consecutive utterances by the same
    /// speaker are merged with a space; the first strategy label is kept.
    pub fn to_history(&self) -> Result<DialogueHistory, PersonaError> {
        let mut merged: Vec<(Role, String, Option<String>)> = Vec::new();
        for (pos, u) in self.dialog.iter().enumerate() {
            let role = speaker_role(&u.speaker).ok_or_else(|| PersonaError::InvalidTurn {
                index: pos,
                reason: format!("unknown speaker {:?}", u.speaker),
            })?;
            let text = u.content.trim();
            if text.is_empty() {
                continue;
            }
            match merged.last_mut() {
                Some((r, t, s)) if *r == role => {
                    t.push(' ');
                    t.push_str(text);
                    if s.is_none() {
                        s.clone_from(&u.annotation.strategy);
                    }
                }
                _ => merged.push((role, text.to_string(), u.annotation.strategy.clone())),
            }
        }
        let mut history = DialogueHistory::new();
        for (role, text, strategy) in merged {
            history.push(role, &text, strategy)?;
        }
        Ok(history)
    }
}
