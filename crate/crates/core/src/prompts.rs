//! Versioned prompt catalog.
//!
//! Templates are plain text files under `prompts/` with `{name}` placeholders.
//! The built-in set is compiled in; [`PromptCatalog::from_dir`] overlays
//! same-named files from a directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

pub const CATALOG_VERSION: &str = "1";

pub const DETECT_USER_ATTRIBUTES: &str = "detect_user_attributes";
pub const VERIFY_MANIFESTED: &str = "verify_manifested";
pub const MATCH_ATTRIBUTE: &str = "match_attribute";
pub const CHECK_COMPATIBILITY: &str = "check_compatibility";
pub const PROFILE_REFINE: &str = "profile_refine";
pub const SYSTEM_PREAMBLE: &str = "system_preamble";
pub const SYSTEM_PERSONA: &str = "system_persona";
pub const PREMATCH_PERSONA: &str = "prematch_persona";
pub const ANNOTATE_SEEKER: &str = "annotate_seeker";
pub const ANNOTATE_SUPPORTER: &str = "annotate_supporter";
pub const JUDGE_DPO: &str = "judge_dpo";
pub const SEEKER_RESPONSE: &str = "seeker_response";
pub const REMINDER_ATTRIBUTE_LIST: &str = "reminder_attribute_list";
pub const REMINDER_ID_LIST: &str = "reminder_id_list";
pub const REMINDER_PROFILE: &str = "reminder_profile";

/// Task tag for persona-grounded reply generation (system prompt + history).
pub const GENERATE_RESPONSE: &str = "generate_response";

const BUILTIN: &[(&str, &str)] = &[
    (DETECT_USER_ATTRIBUTES, include_str!("../prompts/detect_user_attributes.txt")),
    (VERIFY_MANIFESTED, include_str!("../prompts/verify_manifested.txt")),
    (MATCH_ATTRIBUTE, include_str!("../prompts/match_attribute.txt")),
    (CHECK_COMPATIBILITY, include_str!("../prompts/check_compatibility.txt")),
    (PROFILE_REFINE, include_str!("../prompts/profile_refine.txt")),
    (SYSTEM_PREAMBLE, include_str!("../prompts/system_preamble.txt")),
    (SYSTEM_PERSONA, include_str!("../prompts/system_persona.txt")),
    (PREMATCH_PERSONA, include_str!("../prompts/prematch_persona.txt")),
    (ANNOTATE_SEEKER, include_str!("../prompts/annotate_seeker.txt")),
    (ANNOTATE_SUPPORTER, include_str!("../prompts/annotate_supporter.txt")),
    (JUDGE_DPO, include_str!("../prompts/judge_dpo.txt")),
    (SEEKER_RESPONSE, include_str!("../prompts/seeker_response.txt")),
    (REMINDER_ATTRIBUTE_LIST, include_str!("../prompts/reminder_attribute_list.txt")),
    (REMINDER_ID_LIST, include_str!("../prompts/reminder_id_list.txt")),
    (REMINDER_PROFILE, include_str!("../prompts/reminder_profile.txt")),
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template:?} needs a value for {{{placeholder}}}")]
    MissingValue { template: String, placeholder: String },
    #[error("reading template {path}: {message}")]
    Io { path: String, message: String },
}

/// One piece of a parsed template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment<'a> {
    Text(&'a str),
    Placeholder(&'a str),
}

/// Splits a template into literal text and `{name}` placeholders, where a
/// name is one or more of `[a-z0-9_]`. Any other brace is literal.
pub fn parse_template(template: &str) -> Vec<Segment<'_>> {
    let bytes = template.as_bytes();
    let mut out = Vec::new();
    let mut literal_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let name_len = bytes[i + 1..]
                .iter()
                .take_while(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || **b == b'_')
                .count();
            let close = i + 1 + name_len;
            if name_len > 0 && close < bytes.len() && bytes[close] == b'}' {
                if literal_start < i {
                    out.push(Segment::Text(&template[literal_start..i]));
                }
                out.push(Segment::Placeholder(&template[i + 1..close]));
                i = close + 1;
                literal_start = i;
                continue;
            }
        }
        i += 1;
    }
    if literal_start < bytes.len() {
        out.push(Segment::Text(&template[literal_start..]));
    }
    out
}

pub fn placeholders(template: &str) -> BTreeSet<&str> {
    parse_template(template)
        .into_iter()
        .filter_map(|s| match s {
            Segment::Placeholder(name) => Some(name),
            Segment::Text(_) => None,
        })
        .collect()
}

/// Single-pass substitution; values are inserted verbatim and never
/// re-scanned.
pub fn render_template(name: &str, template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    for segment in parse_template(template) {
        match segment {
            Segment::Text(t) => out.push_str(t),
            Segment::Placeholder(p) => {
                let value = vars
                    .iter()
                    .find(|(k, _)| *k == p)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::MissingValue {
                        template: name.to_string(),
                        placeholder: p.to_string(),
                    })?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PromptCatalog {
    templates: BTreeMap<String, String>,
}

impl Default for PromptCatalog {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptCatalog {
    pub fn builtin() -> Self {
        PromptCatalog {
            templates: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.trim_end().to_string()))
                .collect(),
        }
    }

    /// Built-in catalog with every `<name>.txt` in `dir` layered on top.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let io = |e: std::io::Error| PromptError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        };
        let mut catalog = Self::builtin();
        for entry in std::fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                let text = std::fs::read_to_string(&path).map_err(io)?;
                catalog.templates.insert(stem.to_string(), text.trim_end().to_string());
            }
        }
        Ok(catalog)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn template(&self, name: &str) -> Result<&str, PromptError> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))
    }

    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        render_template(name, self.template(name)?, vars)
    }
}
