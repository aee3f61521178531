//! Attribute-level adaptation: match each new user attribute to a
//! same-category agent attribute and admit it only if it does not contradict
//! what the agent has already revealed.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::detection::{DetectedAttribute, OutputParseError};
use crate::events::{AdaptationEvent, EventKind};
use crate::gateway::{ChatMessage, Gateway, GatewayError};
use crate::persona::{AttrId, AttributeOrigin, Persona, PersonaAttribute, PersonaCategory, PersonaError};
use crate::prompts::{self, PromptCatalog, PromptError};

pub const DEFAULT_MAX_ITERS: u32 = 3;
pub const MATCH_TEMPERATURE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub category: PersonaCategory,
    pub text: String,
    pub attempt: u32,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("no {0} attribute available to the matcher")]
    NoCandidate(PersonaCategory),
    #[error("matcher produced an empty attribute")]
    EmptyOutput,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

pub trait Matcher: Send + Sync {
    /// Proposes an agent attribute for `user_attr`. Later attempts should be
    /// able to yield a different candidate.
    fn propose(
        &self,
        user_attr: &DetectedAttribute,
        user_persona: &Persona,
        agent_persona: &Persona,
        attempt: u32,
    ) -> Result<MatchCandidate, MatchError>;

    fn name(&self) -> &'static str;
}

/// Samples a candidate from a chat model. The attempt number is part of the
/// prompt, so each retry is a distinct request.
pub struct PromptMatcher {
    gateway: Gateway,
    catalog: Arc<PromptCatalog>,
    pub temperature: f64,
    pub top_p: f64,
}

impl PromptMatcher {
    pub fn new(gateway: Gateway, catalog: Arc<PromptCatalog>) -> Self {
        PromptMatcher {
            gateway,
            catalog,
            temperature: MATCH_TEMPERATURE,
            top_p: 0.9,
        }
    }
}

/// First non-empty line with bullets, quotes and a leading `Category:` label
/// removed.
fn clean_attribute_line(output: &str, category: PersonaCategory) -> Option<String> {
    let line = output.lines().map(str::trim).find(|l| !l.is_empty())?;
    let mut line = line.trim_start_matches(['-', '*', ' ']).trim();
    for label in [category.label(), category.key()] {
        if let Some(rest) = line.strip_prefix(label).and_then(|r| r.strip_prefix(':')) {
            line = rest.trim();
        }
    }
    let line = line.trim_matches(|c| c == '"' || c == '\'').trim();
    (!line.is_empty()).then(|| line.to_string())
}

impl Matcher for PromptMatcher {
    fn propose(
        &self,
        user_attr: &DetectedAttribute,
        user_persona: &Persona,
        agent_persona: &Persona,
        attempt: u32,
    ) -> Result<MatchCandidate, MatchError> {
        let prompt = self.catalog.render(
            prompts::MATCH_ATTRIBUTE,
            &[
                ("category", user_attr.category.label()),
                ("user_attribute", &user_attr.text),
                ("user_persona", &user_persona.render_profile()),
                ("agent_persona", &agent_persona.render_profile()),
                ("attempt", &attempt.to_string()),
            ],
        )?;
        let mut request = self.gateway.request(prompts::MATCH_ATTRIBUTE, vec![ChatMessage::user(prompt)]);
        request.temperature = self.temperature;
        request.top_p = self.top_p;
        request.max_tokens = 64;
        let reply = self.gateway.chat_one(&request)?;
        let text = clean_attribute_line(&reply, user_attr.category).ok_or(MatchError::EmptyOutput)?;
        Ok(MatchCandidate {
            category: user_attr.category,
            text,
            attempt,
        })
    }

    fn name(&self) -> &'static str {
        "prompt"
    }
}

/// Returns ground-truth supporter attributes of the requested category,
/// cycling through them as attempts increase.
#[derive(Debug, Clone)]
pub struct OracleMatcher {
    ground_truth: Persona,
}

impl OracleMatcher {
    pub fn new(ground_truth: Persona) -> Self {
        OracleMatcher { ground_truth }
    }
}

impl Matcher for OracleMatcher {
    fn propose(&self, user_attr: &DetectedAttribute, _: &Persona, _: &Persona, attempt: u32) -> Result<MatchCandidate, MatchError> {
        let pool: Vec<&PersonaAttribute> = self.ground_truth.in_category(user_attr.category).collect();
        if pool.is_empty() {
            return Err(MatchError::NoCandidate(user_attr.category));
        }
        let pick = pool[(attempt.max(1) as usize - 1) % pool.len()];
        Ok(MatchCandidate {
            category: user_attr.category,
            text: pick.text.clone(),
            attempt,
        })
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

/// Mirrors the user attribute back as the agent's own.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoMatcher;

impl Matcher for EchoMatcher {
    fn propose(&self, user_attr: &DetectedAttribute, _: &Persona, _: &Persona, attempt: u32) -> Result<MatchCandidate, MatchError> {
        Ok(MatchCandidate {
            category: user_attr.category,
            text: user_attr.text.clone(),
            attempt,
        })
    }

    fn name(&self) -> &'static str {
        "echo"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityVerdict {
    pub compatible: bool,
    pub conflicting_ids: Vec<AttrId>,
    pub rationale: String,
}

impl CompatibilityVerdict {
    fn rejected(rationale: impl Into<String>) -> Self {
        CompatibilityVerdict {
            compatible: false,
            conflicting_ids: Vec::new(),
            rationale: rationale.into(),
        }
    }
}

/// Parses `{"compatible": bool, "conflicting_ids": [..], "rationale": ".."}`.
/// Ids are dropped when the verdict is compatible.
pub fn parse_verdict(output: &str) -> Result<CompatibilityVerdict, OutputParseError> {
    let start = output.find('{').ok_or_else(|| OutputParseError("no JSON object".into()))?;
    let end = output.rfind('}').filter(|e| *e > start).ok_or_else(|| OutputParseError("no JSON object".into()))?;
    let value: Value = serde_json::from_str(&output[start..=end]).map_err(|e| OutputParseError(e.to_string()))?;
    let compatible = match value.get("compatible") {
        Some(Value::Bool(b)) => *b,
        Some(Value::String(s)) if s.eq_ignore_ascii_case("true") => true,
        Some(Value::String(s)) if s.eq_ignore_ascii_case("false") => false,
        _ => return Err(OutputParseError("missing boolean \"compatible\"".into())),
    };
    let conflicting_ids = if compatible {
        Vec::new()
    } else {
        value
            .get("conflicting_ids")
            .and_then(Value::as_array)
            .map(|ids| ids.iter().filter_map(Value::as_u64).map(AttrId).collect())
            .unwrap_or_default()
    };
    let rationale = value.get("rationale").and_then(Value::as_str).unwrap_or("").to_string();
    Ok(CompatibilityVerdict {
        compatible,
        conflicting_ids,
        rationale,
    })
}

/// Checks `candidate` against the inadaptable attributes. An empty set is
/// trivially compatible and costs no call; anything unparseable or failing
/// counts as incompatible.
pub fn check_compatibility(
    candidate: &MatchCandidate,
    inadaptable: &[PersonaAttribute],
    gateway: &Gateway,
    catalog: &PromptCatalog,
) -> CompatibilityVerdict {
    if inadaptable.is_empty() {
        return CompatibilityVerdict {
            compatible: true,
            conflicting_ids: Vec::new(),
            rationale: "no revealed attributes".into(),
        };
    }
    let listing = inadaptable
        .iter()
        .map(|a| format!("[{}] {}", a.id, a.text))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = match catalog.render(
        prompts::CHECK_COMPATIBILITY,
        &[("candidate", &candidate.text), ("inadaptable", &listing)],
    ) {
        Ok(p) => p,
        Err(e) => return CompatibilityVerdict::rejected(format!("prompt error: {e}")),
    };
    let request = gateway.request(prompts::CHECK_COMPATIBILITY, vec![ChatMessage::user(prompt)]);
    match gateway.chat_one(&request) {
        Ok(reply) => parse_verdict(&reply)
            .map(|mut v| {
                v.conflicting_ids.retain(|id| inadaptable.iter().any(|a| a.id == *id));
                v
            })
            .unwrap_or_else(|e| CompatibilityVerdict::rejected(format!("unparseable verdict: {}", e.0))),
        Err(e) => {
            tracing::warn!("compatibility check failed: {e}");
            CompatibilityVerdict::rejected("backend unavailable")
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub persona: Persona,
    pub events: Vec<AdaptationEvent>,
    /// Ids newly added to the persona, in order.
    pub matched: Vec<AttrId>,
}

fn attr_json(category: PersonaCategory, text: &str) -> Value {
    json!({ "category": category, "text": text })
}

/// Runs propose/check for each user attribute, at most `max_iters` attempts
/// each. Existing agent attributes are never edited or removed.
#[allow(clippy::too_many_arguments)]
pub fn adapt(
    new_user_attrs: &[DetectedAttribute],
    user_persona: &Persona,
    agent_persona: &Persona,
    matcher: &dyn Matcher,
    gateway: &Gateway,
    catalog: &PromptCatalog,
    max_iters: u32,
    turn: u32,
) -> Result<AdaptOutcome, PersonaError> {
    let max_iters = max_iters.max(1);
    let mut persona = agent_persona.clone();
    let inadaptable = persona.inadaptable_set();
    let mut events = Vec::new();
    let mut matched = Vec::new();

    for user_attr in new_user_attrs {
        let source = attr_json(user_attr.category, &user_attr.text);
        let mut admitted = false;
        let mut skip_reason = "compatibility check failed on every attempt".to_string();
        let mut attempts = 0;
        for attempt in 1..=max_iters {
            attempts = attempt;
            let candidate = match matcher.propose(user_attr, user_persona, &persona, attempt) {
                Ok(c) if c.category != user_attr.category => {
                    skip_reason = format!("matcher returned category {} for {}", c.category, user_attr.category);
                    break;
                }
                Ok(c) => c,
                Err(e) => {
                    skip_reason = format!("match failed: {e}");
                    break;
                }
            };
            if let Some(existing) = persona.find(candidate.category, &candidate.text) {
                events.push(AdaptationEvent::new(
                    EventKind::AttrMatched,
                    turn,
                    json!({
                        "user_attr": source,
                        "attr_id": existing.id,
                        "category": existing.category,
                        "text": existing.text,
                        "attempt": attempt,
                        "existing": true,
                    }),
                ));
                admitted = true;
                break;
            }
            let verdict = check_compatibility(&candidate, &inadaptable, gateway, catalog);
            if verdict.compatible {
                let id = persona.add_attribute(candidate.category, &candidate.text, AttributeOrigin::AttrMatch, turn)?;
                matched.push(id);
                events.push(AdaptationEvent::new(
                    EventKind::AttrMatched,
                    turn,
                    json!({
                        "user_attr": source,
                        "attr_id": id,
                        "category": candidate.category,
                        "text": candidate.text,
                        "attempt": attempt,
                        "existing": false,
                    }),
                ));
                admitted = true;
                break;
            }
            events.push(AdaptationEvent::new(
                EventKind::CompatibilityRejected,
                turn,
                json!({
                    "user_attr": source,
                    "candidate": attr_json(candidate.category, &candidate.text),
                    "attempt": attempt,
                    "conflicting_ids": verdict.conflicting_ids,
                    "rationale": verdict.rationale,
                }),
            ));
        }
        if !admitted {
            events.push(AdaptationEvent::new(
                EventKind::AttrSkipped,
                turn,
                json!({ "user_attr": source, "attempts": attempts, "reason": skip_reason }),
            ));
        }
    }
    Ok(AdaptOutcome { persona, events, matched })
}
