//! New user-attribute detection and manifested agent-attribute detection.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::embed_index::{EmbeddingIndex, IndexError};
use crate::gateway::{ChatMessage, Gateway, GatewayError};
use crate::persona::{normalize_text, AttrId, DialogueTurn, Persona, PersonaCategory, Role};
use crate::prompts::{self, PromptCatalog, PromptError};

/// Number of turns before the latest user utterance included as context.
pub const DETECTION_CONTEXT_TURNS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetectedAttribute {
    pub category: PersonaCategory,
    pub text: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("the latest turn must be a user turn")]
    NotUserTurn,
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unparseable model output: {0}")]
pub struct OutputParseError(pub String);

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let t = t.strip_prefix("```json").or_else(|| t.strip_prefix("```")).unwrap_or(t);
    t.strip_suffix("```").unwrap_or(t).trim()
}

fn is_none_sentinel(text: &str) -> bool {
    let t = normalize_text(text);
    t == "none" || t == "\"none\""
}

/// Outermost `open ... close` span, if any.
fn bracketed(text: &str, open: char, close: char) -> Option<&str> {
    let start = text.find(open)?;
    let end = text.rfind(close)?;
    (end > start).then(|| &text[start..=end])
}

/// Parses a JSON array (or single object) of `{category, text}` records, or
/// the `NONE` sentinel. Unknown categories become `OtherExperiences`;
/// entries with empty text are dropped; duplicates collapse.
pub fn parse_attribute_list(output: &str) -> Result<Vec<DetectedAttribute>, OutputParseError> {
    let body = strip_fences(output);
    if is_none_sentinel(body) {
        return Ok(Vec::new());
    }
    let value: Value = match bracketed(body, '[', ']') {
        Some(span) => serde_json::from_str(span),
        None => match bracketed(body, '{', '}') {
            Some(span) => serde_json::from_str(span),
            None => return Err(OutputParseError("no JSON array or NONE".into())),
        },
    }
    .map_err(|e| OutputParseError(e.to_string()))?;
    let items = match value {
        Value::Array(items) => items,
        obj @ Value::Object(_) => vec![obj],
        _ => return Err(OutputParseError("expected array of objects".into())),
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in items {
        let Value::Object(map) = item else {
            return Err(OutputParseError("array element is not an object".into()));
        };
        let category = map.get("category").and_then(Value::as_str).unwrap_or("");
        let text = map.get("text").and_then(Value::as_str).unwrap_or("").trim();
        if normalize_text(text).is_empty() {
            continue;
        }
        let category = PersonaCategory::coerce(category);
        if seen.insert((category, normalize_text(text))) {
            out.push(DetectedAttribute {
                category,
                text: text.to_string(),
            });
        }
    }
    Ok(out)
}

/// Parses a JSON array of integer ids (numbers or numeric strings), or `NONE`.
pub fn parse_id_list(output: &str) -> Result<Vec<u64>, OutputParseError> {
    let body = strip_fences(output);
    if is_none_sentinel(body) {
        return Ok(Vec::new());
    }
    let span = bracketed(body, '[', ']').ok_or_else(|| OutputParseError("no JSON array or NONE".into()))?;
    let items: Vec<Value> = serde_json::from_str(span).map_err(|e| OutputParseError(e.to_string()))?;
    items
        .into_iter()
        .map(|v| match v {
            Value::Number(n) => n.as_u64(),
            Value::String(s) => s.trim().trim_matches(|c| c == '[' || c == ']').parse().ok(),
            _ => None,
        })
        .map(|id| id.ok_or_else(|| OutputParseError("id is not a non-negative integer".into())))
        .collect()
}

/// Renders turns as `Seeker: ...` / `Supporter: ...` lines.
pub fn format_turns(turns: &[DialogueTurn]) -> String {
    if turns.is_empty() {
        return "(none)".into();
    }
    turns
        .iter()
        .map(|t| {
            let who = match t.speaker {
                Role::User => "Seeker",
                Role::Agent => "Supporter",
            };
            format!("{who}: {}", t.text)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Sends `prompt`; if `parse` rejects the reply, re-sends once with the
/// format reminder appended. `Ok(Err(..))` means both replies were unusable.
pub(crate) fn ask_with_reprompt<T>(
    gateway: &Gateway,
    catalog: &PromptCatalog,
    task: &str,
    prompt: &str,
    reminder: &str,
    configure: impl Fn(&mut crate::gateway::ChatRequest),
    parse: impl Fn(&str) -> Result<T, OutputParseError>,
) -> Result<Result<T, OutputParseError>, DetectionError> {
    let mut request = gateway.request(task, vec![ChatMessage::user(prompt)]);
    configure(&mut request);
    let first = gateway.chat_one(&request)?;
    let first_err = match parse(&first) {
        Ok(v) => return Ok(Ok(v)),
        Err(e) => e,
    };
    tracing::debug!(task, "re-prompting after parse failure: {first_err}");
    let retry_prompt = format!("{prompt}\n\n{}", catalog.template(reminder)?);
    let mut request = gateway.request(task, vec![ChatMessage::user(retry_prompt)]);
    configure(&mut request);
    let second = gateway.chat_one(&request)?;
    Ok(parse(&second))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Detection {
    pub attributes: Vec<DetectedAttribute>,
    pub warning: Option<String>,
}

/// Detects new user persona attributes in the latest user turn.
pub fn detect_user_attributes(
    history: &[DialogueTurn],
    user_persona: &Persona,
    gateway: &Gateway,
    catalog: &PromptCatalog,
) -> Result<Detection, DetectionError> {
    let (last, earlier) = history.split_last().ok_or(DetectionError::NotUserTurn)?;
    if last.speaker != Role::User {
        return Err(DetectionError::NotUserTurn);
    }
    let context_start = earlier.len().saturating_sub(DETECTION_CONTEXT_TURNS);
    let prompt = catalog.render(
        prompts::DETECT_USER_ATTRIBUTES,
        &[
            ("history", &format_turns(&earlier[context_start..])),
            ("utterance", &last.text),
            ("user_persona", &user_persona.render_profile()),
        ],
    )?;
    let parsed = ask_with_reprompt(
        gateway,
        catalog,
        prompts::DETECT_USER_ATTRIBUTES,
        &prompt,
        prompts::REMINDER_ATTRIBUTE_LIST,
        |_| {},
        parse_attribute_list,
    )?;
    Ok(match parsed {
        Ok(found) => Detection {
            attributes: found
                .into_iter()
                .filter(|a| user_persona.find(a.category, &a.text).is_none())
                .collect(),
            warning: None,
        },
        Err(e) => Detection {
            attributes: Vec::new(),
            warning: Some(format!("user attribute detection failed twice: {e}")),
        },
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ManifestDetection {
    /// Confirmed manifested attribute ids.
    pub ids: BTreeSet<AttrId>,
    /// Retrieved candidates shown to the verifier, in rank order.
    pub candidates: Vec<AttrId>,
    pub warning: Option<String>,
}

/// Finds agent attributes expressed in `utterance`: embedding retrieval of
/// the top `m` attributes followed by model verification.
pub fn detect_manifested(
    utterance: &str,
    agent_persona: &Persona,
    index: &EmbeddingIndex,
    gateway: &Gateway,
    catalog: &PromptCatalog,
    m: usize,
) -> Result<ManifestDetection, DetectionError> {
    if utterance.trim().is_empty() {
        return Err(DetectionError::EmptyUtterance);
    }
    if index.is_empty() || agent_persona.is_empty() {
        return Ok(ManifestDetection::default());
    }
    let query = gateway.embed(&[utterance.to_string()])?.remove(0);
    let candidates: Vec<AttrId> = index
        .top_m(&query, index.len())?
        .into_iter()
        .filter(|hit| agent_persona.get(hit.id).is_some())
        .take(m)
        .map(|hit| hit.id)
        .collect();
    if candidates.is_empty() {
        return Ok(ManifestDetection::default());
    }
    let listing = candidates
        .iter()
        .map(|id| format!("[{id}] {}", agent_persona.get(*id).expect("filtered above").text))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = catalog.render(
        prompts::VERIFY_MANIFESTED,
        &[("utterance", utterance.trim()), ("candidates", &listing)],
    )?;
    let parsed = ask_with_reprompt(
        gateway,
        catalog,
        prompts::VERIFY_MANIFESTED,
        &prompt,
        prompts::REMINDER_ID_LIST,
        |_| {},
        parse_id_list,
    )?;
    Ok(match parsed {
        Ok(ids) => ManifestDetection {
            ids: ids
                .into_iter()
                .map(AttrId)
                .filter(|id| candidates.contains(id))
                .collect(),
            candidates,
            warning: None,
        },
        Err(e) => ManifestDetection {
            ids: BTreeSet::new(),
            candidates,
            warning: Some(format!("manifestation verification failed twice: {e}")),
        },
    })
}

/// Embeds every attribute of `persona` into a fresh index.
pub fn index_persona(persona: &Persona, gateway: &Gateway) -> Result<EmbeddingIndex, DetectionError> {
    let mut index = EmbeddingIndex::new();
    if persona.is_empty() {
        return Ok(index);
    }
    let texts: Vec<String> = persona.attributes().iter().map(|a| a.text.clone()).collect();
    for (attr, vector) in persona.attributes().iter().zip(gateway.embed(&texts)?) {
        index.upsert(attr.id, vector)?;
    }
    Ok(index)
}
