//! Self-play evaluation: a seeker agent grounded on a persona talks to the
//! engine for a bounded number of rounds.

pub mod desk;
mod eval;

pub use eval::{
    alignment_curve, export_pairwise_bundle, static_eval, AlignmentCurve, CurvePoint, EvalDialogue, PairwiseBundle,
    PairwiseItem, PairwiseKey, SettingTranscripts, StaticEvalRow, Transcript, PAIRWISE_DIMENSIONS,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::format_turns;
use crate::engine::{Engine, EngineConfig, EngineError, PersonaSetting, SessionState};
use crate::gateway::{ChatMessage, Gateway};
use crate::metrics::MetricError;
use crate::persona::{render_attributes, DialogueHistory, Persona, PersonaCategory};
use crate::prompts::{self, PromptCatalog};

pub const DEFAULT_MAX_ROUNDS: u32 = 8;
pub const DEFAULT_DIALOGUES: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("seeker persona is empty")]
    EmptySeekerPersona,
    #[error("max_rounds must be >= 1")]
    NoRounds,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub max_rounds: u32,
    pub seed: u64,
    pub settings: Vec<PersonaSetting>,
    /// Persona used by every StaticSupporter session.
    pub static_persona: Option<Persona>,
    pub seeker_temperature: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            max_rounds: DEFAULT_MAX_ROUNDS,
            seed: 0,
            settings: PersonaSetting::ALL.to_vec(),
            static_persona: None,
            seeker_temperature: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub transcript: DialogueHistory,
    pub state: SessionState,
    /// True when a backend failure ended the dialogue early.
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Pre-chat survey derived from the seeker's demographic attributes, or the
/// whole persona when it has none.
pub fn survey_from_persona(seeker: &Persona) -> String {
    const SURVEY: [PersonaCategory; 4] = [
        PersonaCategory::Gender,
        PersonaCategory::Age,
        PersonaCategory::Location,
        PersonaCategory::Occupation,
    ];
    let picked: Vec<_> = seeker.attributes().iter().filter(|a| SURVEY.contains(&a.category)).collect();
    if picked.is_empty() {
        seeker.render_profile()
    } else {
        render_attributes(picked)
    }
}

fn seeker_turn(
    seeker: &Gateway,
    catalog: &PromptCatalog,
    persona: &Persona,
    history: &DialogueHistory,
    temperature: f64,
) -> Result<String, String> {
    let prompt = catalog
        .render(
            prompts::SEEKER_RESPONSE,
            &[("seeker_persona", &persona.render_profile()), ("history", &format_turns(history.turns()))],
        )
        .map_err(|e| e.to_string())?;
    let mut request = seeker.request(prompts::SEEKER_RESPONSE, vec![ChatMessage::user(prompt)]);
    request.temperature = temperature;
    request.top_p = 0.9;
    request.max_tokens = 128;
    let text = seeker.chat_one(&request).map_err(|e| e.to_string())?;
    let text = text.trim();
    if text.is_empty() {
        return Err("seeker produced an empty message".into());
    }
    Ok(text.to_string())
}

/// Runs up to `sim.max_rounds` seeker/engine rounds, seeker first. A backend
/// failure stops the dialogue and returns the committed part.
pub fn simulate(
    session_id: &str,
    seeker_persona: &Persona,
    engine: &Engine,
    engine_config: EngineConfig,
    sim: &SimulationConfig,
    seeker: &Gateway,
) -> Result<SimulationResult, SimError> {
    if seeker_persona.is_empty() {
        return Err(SimError::EmptySeekerPersona);
    }
    if sim.max_rounds < 1 {
        return Err(SimError::NoRounds);
    }
    let survey = survey_from_persona(seeker_persona);
    let mut state = engine.create_session(session_id, engine_config, Some(&survey), sim.static_persona.clone())?;
    let mut failure = None;
    for _ in 0..sim.max_rounds {
        let message = match seeker_turn(seeker, engine.catalog(), seeker_persona, &state.history, sim.seeker_temperature) {
            Ok(m) => m,
            Err(e) => {
                failure = Some(format!("seeker: {e}"));
                break;
            }
        };
        match engine.step(&state, &message) {
            Ok(out) => state = out.state,
            Err(e) => {
                failure = Some(format!("engine: {e}"));
                break;
            }
        }
    }
    Ok(SimulationResult {
        transcript: state.history.clone(),
        state,
        truncated: failure.is_some(),
        error: failure,
    })
}
