//! Profile-level adaptation: periodically rewrite the whole agent persona
//! while keeping every revealed attribute exactly as it was.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{ask_with_reprompt, DetectionError, OutputParseError};
use crate::gateway::Gateway;
use crate::persona::{
    normalize_text, parse_profile, render_attributes, AttrId, AttributeOrigin, AttributeStatus, Persona,
    PersonaAttribute, PersonaCategory,
};
use crate::prompts::{self, PromptCatalog};

pub const DEFAULT_REFINE_PERIOD: u32 = 4;

/// True on every `k`-th user turn.
pub fn should_refine(user_turn_count: u32, k: u32) -> bool {
    k >= 1 && user_turn_count > 0 && user_turn_count % k == 0
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementInput {
    pub user_persona: Persona,
    pub inadaptable: Vec<PersonaAttribute>,
    pub newly_matched: Vec<PersonaAttribute>,
    pub previous_agent_persona: Persona,
}

impl RefinementInput {
    /// Builds the input from current personas; `newly_matched` are ids added
    /// since the last refinement.
    pub fn from_personas(user_persona: &Persona, agent_persona: &Persona, newly_matched: &[AttrId]) -> Self {
        RefinementInput {
            user_persona: user_persona.clone(),
            inadaptable: agent_persona.inadaptable_set(),
            newly_matched: newly_matched
                .iter()
                .filter_map(|id| agent_persona.get(*id))
                .cloned()
                .collect(),
            previous_agent_persona: agent_persona.clone(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("inadaptable attribute {0} is not an inadaptable attribute of the previous persona")]
    InadaptableNotInPersona(AttrId),
    #[error(transparent)]
    Prompt(#[from] crate::prompts::PromptError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub added: Vec<AttrId>,
    pub removed: Vec<AttrId>,
    /// Inadaptable attributes the model dropped and that were put back.
    pub reinserted: Vec<AttrId>,
    /// Set when the refinement was abandoned and the persona kept as is.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineSampling {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for RefineSampling {
    fn default() -> Self {
        RefineSampling {
            temperature: 0.8,
            top_p: 0.9,
            max_tokens: 512,
        }
    }
}

fn validate(input: &RefinementInput) -> Result<(), RefineError> {
    for attr in &input.inadaptable {
        match input.previous_agent_persona.get(attr.id) {
            Some(prev) if prev.is_inadaptable() && prev.text == attr.text => {}
            _ => return Err(RefineError::InadaptableNotInPersona(attr.id)),
        }
    }
    Ok(())
}

pub fn refinement_prompt(input: &RefinementInput, catalog: &PromptCatalog) -> Result<String, RefineError> {
    Ok(catalog.render(
        prompts::PROFILE_REFINE,
        &[
            ("user_persona", &input.user_persona.render_profile()),
            ("inadaptable", &render_attributes(&input.inadaptable)),
            ("newly_matched", &render_attributes(&input.newly_matched)),
            ("agent_persona", &input.previous_agent_persona.render_profile()),
        ],
    )?)
}

/// Merges a parsed profile into a new persona. Lines matching an inadaptable
/// or surviving adaptable attribute keep its id; other lines get fresh ids.
/// Inadaptable attributes missing from the parse are appended.
pub fn merge_refined(
    input: &RefinementInput,
    parsed: &[(PersonaCategory, String)],
    turn: u32,
) -> (Persona, RefineReport) {
    let previous = &input.previous_agent_persona;
    let mut next_id = previous.next_id();
    let mut seen = HashSet::new();
    let mut attrs: Vec<PersonaAttribute> = Vec::new();
    let mut added = Vec::new();
    let parsed_norm: Vec<String> = parsed.iter().map(|(_, t)| normalize_text(t)).collect();

    for ((category, text), norm) in parsed.iter().zip(&parsed_norm) {
        if norm.is_empty() || !seen.insert((*category, norm.clone())) {
            continue;
        }
        if let Some(keep) = input
            .inadaptable
            .iter()
            .find(|a| a.category == *category && a.normalized() == *norm)
        {
            attrs.push(keep.clone());
        } else if let Some(prev) = previous.find(*category, text).filter(|p| !p.is_inadaptable()) {
            attrs.push(prev.clone());
        } else {
            let id = AttrId(next_id);
            next_id += 1;
            added.push(id);
            attrs.push(PersonaAttribute {
                id,
                category: *category,
                text: text.trim().to_string(),
                status: AttributeStatus::Adaptable,
                origin: AttributeOrigin::ProfileRefine,
                created_turn: turn,
                manifested_turn: None,
            });
        }
    }

    let mut reinserted = Vec::new();
    for keep in &input.inadaptable {
        if attrs.iter().any(|a| a.id == keep.id) {
            continue;
        }
        // A line that still contains the attribute's text counts as kept; the
        // canonical attribute is restored either way.
        let norm = keep.normalized();
        if !parsed_norm.iter().any(|p| p.contains(&norm)) {
            reinserted.push(keep.id);
        }
        // drop a fresh line that collides with the restored attribute
        attrs.retain(|a| !(a.category == keep.category && a.normalized() == norm));
        attrs.push(keep.clone());
    }

    let kept: BTreeSet<AttrId> = attrs.iter().map(|a| a.id).collect();
    added.retain(|id| kept.contains(id));
    let removed = previous
        .attributes()
        .iter()
        .map(|a| a.id)
        .filter(|id| !kept.contains(id))
        .collect();
    let persona = Persona::from_parts(previous.owner(), attrs, next_id)
        .expect("merged attributes are unique with fresh ids");
    (
        persona,
        RefineReport {
            added,
            removed,
            reinserted,
            aborted: None,
        },
    )
}

/// Rewrites the agent persona. Parse failures get one re-prompt; a second
/// failure or a backend error aborts and returns the previous persona.
pub fn refine(
    input: &RefinementInput,
    gateway: &Gateway,
    catalog: &PromptCatalog,
    sampling: RefineSampling,
    turn: u32,
) -> Result<(Persona, RefineReport), RefineError> {
    validate(input)?;
    let prompt = refinement_prompt(input, catalog)?;
    let parse = |text: &str| {
        parse_profile(text.trim().trim_start_matches("[PERSONA]").trim_end_matches("[/PERSONA]"))
            .map_err(|e| OutputParseError(e.to_string()))
    };
    let outcome = ask_with_reprompt(
        gateway,
        catalog,
        prompts::PROFILE_REFINE,
        &prompt,
        prompts::REMINDER_PROFILE,
        |req| {
            req.temperature = sampling.temperature;
            req.top_p = sampling.top_p;
            req.max_tokens = sampling.max_tokens;
        },
        parse,
    );
    let abort = |reason: String| {
        tracing::warn!(turn, "refinement aborted: {reason}");
        Ok((
            input.previous_agent_persona.clone(),
            RefineReport {
                aborted: Some(reason),
                ..RefineReport::default()
            },
        ))
    };
    match outcome {
        Ok(Ok(parsed)) => Ok(merge_refined(input, &parsed, turn)),
        Ok(Err(e)) => abort(format!("unparseable refinement after re-prompt: {}", e.0)),
        Err(DetectionError::Prompt(e)) => Err(e.into()),
        Err(e) => abort(e.to_string()),
    }
}
