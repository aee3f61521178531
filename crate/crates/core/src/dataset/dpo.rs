use serde::{Deserialize, Serialize};

use super::{DatasetWarning, MaskedProfileRecord};
use crate::detection::OutputParseError;
use crate::gateway::{ChatMessage, Gateway, GatewayError};
use crate::persona::normalize_text;
use crate::prompts::{self, PromptCatalog};
use crate::refiner::{refinement_prompt, RefinementInput};

pub const DEFAULT_DPO_CANDIDATES: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoPairRecord {
    pub dialogue: usize,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub judge_rationale: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Judgement {
    A,
    B,
    Tie,
}

/// First standalone `A`, `B` or `TIE` token in the reply.
pub fn parse_judgement(reply: &str) -> Result<Judgement, OutputParseError> {
    reply
        .split(|c: char| !c.is_ascii_alphanumeric())
        .find_map(|w| match w.to_ascii_uppercase().as_str() {
            "A" => Some(Judgement::A),
            "B" => Some(Judgement::B),
            "TIE" => Some(Judgement::Tie),
            _ => None,
        })
        .ok_or_else(|| OutputParseError(format!("no verdict in {reply:?}")))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DpoOutcome {
    /// Unordered candidate pairs formed before judging: n(n-1)/2.
    pub candidate_pairs: usize,
    pub pairs: Vec<DpoPairRecord>,
    pub warnings: Vec<DatasetWarning>,
}

/// Samples `n` refinements of the masked supporter persona in one request
/// and judges every unordered pair. Ties, identical candidates and
/// unparseable verdicts are dropped.
pub fn build_dpo_pairs(
    record: &MaskedProfileRecord,
    refiner: &Gateway,
    judge: &Gateway,
    catalog: &PromptCatalog,
    n: u32,
    temperature: f64,
) -> Result<DpoOutcome, GatewayError> {
    if n < 2 {
        return Err(GatewayError::InvalidRequest("DPO needs at least two candidates".into()));
    }
    let input = RefinementInput {
        user_persona: record.masked_seeker.clone(),
        inadaptable: Vec::new(),
        newly_matched: Vec::new(),
        previous_agent_persona: record.masked_supporter.clone(),
    };
    let prompt = refinement_prompt(&input, catalog).map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    let mut request = refiner.request(prompts::PROFILE_REFINE, vec![ChatMessage::user(prompt.clone())]);
    request.n = n;
    request.temperature = temperature;
    request.top_p = 0.9;
    request.max_tokens = 512;
    let candidates: Vec<String> = refiner.chat(&request)?.into_iter().map(|c| c.trim().to_string()).collect();

    let seeker = record.masked_seeker.render_profile();
    let mut outcome = DpoOutcome::default();
    for i in 0..candidates.len() {
        for j in i + 1..candidates.len() {
            outcome.candidate_pairs += 1;
            let (a, b) = (&candidates[i], &candidates[j]);
            if normalize_text(a) == normalize_text(b) {
                outcome
                    .warnings
                    .push(DatasetWarning::new(record.dialogue, "dpo", format!("candidates {i} and {j} are identical")));
                continue;
            }
            match judge_pair(judge, catalog, &seeker, a, b) {
                Ok((Judgement::Tie, _)) => {}
                Ok((verdict, rationale)) => {
                    let (chosen, rejected) = if verdict == Judgement::A { (a, b) } else { (b, a) };
                    outcome.pairs.push(DpoPairRecord {
                        dialogue: record.dialogue,
                        prompt: prompt.clone(),
                        chosen: chosen.clone(),
                        rejected: rejected.clone(),
                        judge_rationale: rationale,
                    });
                }
                Err(message) => outcome.warnings.push(DatasetWarning::new(
                    record.dialogue,
                    "dpo",
                    format!("pair ({i}, {j}) dropped: {message}"),
                )),
            }
        }
    }
    Ok(outcome)
}

fn judge_pair(judge: &Gateway, catalog: &PromptCatalog, seeker: &str, a: &str, b: &str) -> Result<(Judgement, String), String> {
    let prompt = catalog
        .render(
            prompts::JUDGE_DPO,
            &[("user_persona", seeker), ("candidate_a", a), ("candidate_b", b)],
        )
        .map_err(|e| e.to_string())?;
    let reply = judge
        .chat_one(&judge.request(prompts::JUDGE_DPO, vec![ChatMessage::user(prompt)]))
        .map_err(|e| e.to_string())?;
    let verdict = parse_judgement(&reply).map_err(|e| e.0)?;
    Ok((verdict, reply.trim().to_string()))
}

/// Convenience for tests and tooling: the pair list a judge would see.
pub fn candidate_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}
