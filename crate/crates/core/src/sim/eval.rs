use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::engine::{PersonaSetting, SessionState};
use crate::metrics::{a_cover, bleu_n, distinct_n, p_cover, pa_score, rouge_l, IdfModel};
use crate::persona::{DialogueHistory, DialogueTurn, Persona, Role};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub turn: u32,
    pub mean_pa: f64,
    /// Sessions that had a snapshot at this turn.
    pub sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentCurve {
    pub setting: PersonaSetting,
    pub points: Vec<CurvePoint>,
}

/// Mean PA of each setting's agent persona against its ground truth at the
/// sampled turns. Sessions lacking a snapshot for a turn are skipped there.
pub fn alignment_curve(
    sessions: &[(&SessionState, &Persona)],
    model: &IdfModel,
    sample_turns: &[u32],
) -> (Vec<AlignmentCurve>, Vec<String>) {
    let turns: BTreeSet<u32> = sample_turns.iter().copied().collect();
    let mut warnings = Vec::new();
    let mut curves = Vec::new();
    for setting in PersonaSetting::ALL {
        let group: Vec<_> = sessions.iter().filter(|(s, _)| s.config.setting == setting).collect();
        if group.is_empty() {
            continue;
        }
        let mut points = Vec::new();
        for &turn in &turns {
            let mut total = 0.0;
            let mut count = 0;
            for (state, gt) in &group {
                match state.persona_at(turn) {
                    Ok(p) => {
                        total += pa_score(&p, gt, model);
                        count += 1;
                    }
                    Err(e) => warnings.push(format!("session {}: {e}", state.session_id)),
                }
            }
            if count > 0 {
                points.push(CurvePoint {
                    turn,
                    mean_pa: total / count as f64,
                    sessions: count,
                });
            }
        }
        curves.push(AlignmentCurve { setting, points });
    }
    (curves, warnings)
}

/// Responses of one dialogue with their references and the persona they are
/// scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDialogue {
    pub responses: Vec<String>,
    pub references: Vec<String>,
    pub persona: Persona,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingTranscripts {
    pub setting: String,
    pub dialogues: Vec<EvalDialogue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticEvalRow {
    pub setting: String,
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub rouge_l: f64,
    pub distinct_1: f64,
    pub distinct_2: f64,
    pub distinct_3: f64,
    pub p_cover: f64,
    pub a_cover: f64,
}

/// One metric row per setting. BLEU and Distinct are corpus-level; ROUGE-L
/// and A-Cover average over responses; P-Cover averages over dialogues.
pub fn static_eval(settings: &[SettingTranscripts], model: &IdfModel) -> Result<Vec<StaticEvalRow>, SimError> {
    if settings.is_empty() {
        return Err(SimError::Invalid("no transcripts to evaluate".into()));
    }
    settings
        .iter()
        .map(|s| {
            let mut responses = Vec::new();
            let mut references = Vec::new();
            let mut a_total = 0.0;
            let mut p_total = 0.0;
            for (i, d) in s.dialogues.iter().enumerate() {
                if d.responses.len() != d.references.len() {
                    return Err(SimError::Invalid(format!(
                        "{}: dialogue {i} has {} responses but {} references",
                        s.setting,
                        d.responses.len(),
                        d.references.len()
                    )));
                }
                responses.extend(d.responses.iter().map(String::as_str));
                references.extend(d.references.iter().map(String::as_str));
                a_total += d.responses.iter().map(|r| a_cover(r, &d.persona, model)).sum::<f64>();
                p_total += p_cover(&d.responses, &d.persona, model);
            }
            if responses.is_empty() {
                return Err(SimError::Invalid(format!("{}: no responses", s.setting)));
            }
            let n = responses.len() as f64;
            Ok(StaticEvalRow {
                setting: s.setting.clone(),
                bleu_1: bleu_n(&responses, &references, 1)?,
                bleu_2: bleu_n(&responses, &references, 2)?,
                bleu_3: bleu_n(&responses, &references, 3)?,
                rouge_l: responses.iter().zip(&references).map(|(c, r)| rouge_l(c, r)).sum::<f64>() / n,
                distinct_1: distinct_n(&responses, 1)?,
                distinct_2: distinct_n(&responses, 2)?,
                distinct_3: distinct_n(&responses, 3)?,
                p_cover: p_total / s.dialogues.len() as f64,
                a_cover: a_total / n,
            })
        })
        .collect()
}

pub const PAIRWISE_DIMENSIONS: [&str; 3] = ["Naturalness", "Affinity", "Personalization"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub setting: String,
    pub seeker_persona: Persona,
    pub history: DialogueHistory,
}

impl Transcript {
    pub fn agent_turns(&self) -> Vec<&DialogueTurn> {
        self.history.turns().iter().filter(|t| t.speaker == Role::Agent).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseItem {
    pub id: usize,
    pub seeker_persona: Persona,
    pub conversation_a: DialogueHistory,
    pub conversation_b: DialogueHistory,
}

/// Blinded side-by-side bundle for human raters; settings are hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseBundle {
    pub dimensions: Vec<String>,
    pub items: Vec<PairwiseItem>,
}

/// Unblinding key kept apart from the bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseKey {
    pub seed: u64,
    /// `(setting shown as A, setting shown as B)` per item.
    pub order: Vec<(String, String)>,
}

/// Builds the bundle; each pair's A/B order is a seeded coin flip.
pub fn export_pairwise_bundle(pairs: &[(Transcript, Transcript)], seed: u64) -> Result<(PairwiseBundle, PairwiseKey), SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    let mut order = Vec::new();
    for (id, (x, y)) in pairs.iter().enumerate() {
        if x.seeker_persona != y.seeker_persona {
            return Err(SimError::Invalid(format!("pair {id}: transcripts have different seeker personas")));
        }
        let (a, b) = if rng.gen_bool(0.5) { (y, x) } else { (x, y) };
        items.push(PairwiseItem {
            id,
            seeker_persona: x.seeker_persona.clone(),
            conversation_a: a.history.clone(),
            conversation_b: b.history.clone(),
        });
        order.push((a.setting.clone(), b.setting.clone()));
    }
    Ok((
        PairwiseBundle {
            dimensions: PAIRWISE_DIMENSIONS.iter().map(|d| d.to_string()).collect(),
            items,
        },
        PairwiseKey { seed, order },
    ))
}
