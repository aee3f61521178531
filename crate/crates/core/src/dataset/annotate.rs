use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DatasetWarning;
use crate::detection::{ask_with_reprompt, format_turns, parse_attribute_list};
use crate::gateway::Gateway;
use crate::persona::{AttributeOrigin, DialogueHistory, Persona, Role};
use crate::prompts::{self, PromptCatalog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedDialogue {
    /// Position of the dialogue in the source corpus.
    pub index: usize,
    pub dialogue: DialogueHistory,
    pub seeker_persona: Persona,
    pub supporter_persona: Persona,
}

fn annotate_role(
    index: usize,
    transcript: &str,
    role: Role,
    gateway: &Gateway,
    catalog: &PromptCatalog,
) -> Result<Persona, DatasetWarning> {
    let (template, label) = match role {
        Role::User => (prompts::ANNOTATE_SEEKER, "seeker"),
        Role::Agent => (prompts::ANNOTATE_SUPPORTER, "supporter"),
    };
    let warn = |m: String| DatasetWarning::new(index, "annotate", format!("{label}: {m}"));
    let prompt = catalog.render(template, &[("dialogue", transcript)]).map_err(|e| warn(e.to_string()))?;
    let attrs = ask_with_reprompt(
        gateway,
        catalog,
        template,
        &prompt,
        prompts::REMINDER_ATTRIBUTE_LIST,
        |_| {},
        parse_attribute_list,
    )
    .map_err(|e| warn(e.to_string()))?
    .map_err(|e| warn(e.to_string()))?;
    Persona::from_pairs(
        role,
        AttributeOrigin::Annotation,
        attrs.iter().map(|a| (a.category, a.text.as_str())),
    )
    .map_err(|e| warn(e.to_string()))
}

/// Extracts seeker and supporter personas with the role-specific prompts.
pub fn annotate(
    index: usize,
    dialogue: &DialogueHistory,
    gateway: &Gateway,
    catalog: &PromptCatalog,
) -> Result<AnnotatedDialogue, DatasetWarning> {
    if dialogue.is_empty() {
        return Err(DatasetWarning::new(index, "annotate", "empty dialogue"));
    }
    let transcript = format_turns(dialogue.turns());
    Ok(AnnotatedDialogue {
        index,
        dialogue: dialogue.clone(),
        seeker_persona: annotate_role(index, &transcript, Role::User, gateway, catalog)?,
        supporter_persona: annotate_role(index, &transcript, Role::Agent, gateway, catalog)?,
    })
}

/// Annotates dialogues on `workers` threads; output follows input order.
pub fn annotate_corpus(
    dialogues: &[(usize, DialogueHistory)],
    gateway: &Gateway,
    catalog: &PromptCatalog,
    workers: usize,
) -> (Vec<AnnotatedDialogue>, Vec<DatasetWarning>) {
    let run = || -> Vec<Result<AnnotatedDialogue, DatasetWarning>> {
        dialogues
            .par_iter()
            .map(|(i, d)| annotate(*i, d, gateway, catalog))
            .collect()
    };
    let results = match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    };
    let mut ok = Vec::new();
    let mut warnings = Vec::new();
    for r in results {
        match r {
            Ok(a) => ok.push(a),
            Err(w) => warnings.push(w),
        }
    }
    (ok, warnings)
}
