//! Scripted demo conversation. Backs the service's mock mode and the
//! checked-in golden trace.

use std::sync::Arc;

use serde_json::json;

use crate::adapter::PromptMatcher;
use crate::engine::{Engine, EngineConfig, PersonaSetting};
use crate::gateway::{ChatRequest, Gateway, MockBackend};
use crate::persona::EMPTY_PROFILE;
use crate::prompts::{self, PromptCatalog};

/// The four seeker messages of the golden conversation.
pub const GOLDEN_SCRIPT: [&str; 4] = [
    "I work in IT and lately I've been drowning in debt.",
    "My boss keeps piling on work and I barely sleep anymore.",
    "Thanks, it helps to say it out loud.",
    "I'm 30 and single, so most nights it's just me and the bills.",
];

/// Supporter replies, in order.
pub const GOLDEN_REPLIES: [&str; 4] = [
    "I previously owned a small housecleaning business, so I know how heavy money worries get.",
    "That sounds exhausting. When work piles up like that, rest is usually the first thing to go.",
    "I'm glad it helps. I'm here, take your time.",
    "I went through a divorce myself, and the quiet evenings were the hardest part.",
];

pub const DEMO_REPLY: &str = "I hear you. That sounds like a lot to carry. What has been the hardest part?";

fn last_prompt(req: &ChatRequest) -> &str {
    req.messages.last().map(|m| m.content.as_str()).unwrap_or_default()
}

/// Confirms each `[id] text` candidate whose text occurs in the utterance,
/// ignoring case.
fn verify_by_text(req: &ChatRequest, _: u32) -> Option<String> {
    let prompt = last_prompt(req);
    let utterance = prompt.rsplit("Utterance: ").next()?.lines().next()?.to_lowercase();
    let candidates = prompt.rsplit("Candidates:\n").next()?.split("\nAnswer:").next()?;
    let ids: Vec<u64> = candidates
        .lines()
        .filter_map(|l| {
            let (id, text) = l.strip_prefix('[')?.split_once("] ")?;
            utterance.contains(&text.to_lowercase()).then(|| id.parse().ok())?
        })
        .collect();
    Some(if ids.is_empty() { "NONE".into() } else { json!(ids).to_string() })
}

/// Returns the persona block of a refinement prompt unchanged.
fn echo_refine(req: &ChatRequest, _: u32) -> Option<String> {
    let block = last_prompt(req).rsplit("[PERSONA]\n").next()?.split("\n[/PERSONA]").next()?;
    (block.trim() != EMPTY_PROFILE).then(|| block.to_string())
}

/// Rule-based backend for free-form demo conversations: detects nothing,
/// accepts every candidate, keeps personas as they are and replies
/// generically.
pub fn demo_backend() -> Arc<MockBackend> {
    let mock = MockBackend::new();
    mock.always(prompts::DETECT_USER_ATTRIBUTES, "NONE")
        .always(prompts::MATCH_ATTRIBUTE, "has been through hard times too")
        .always(
            prompts::CHECK_COMPATIBILITY,
            r#"{"compatible": true, "conflicting_ids": [], "rationale": "no conflict"}"#,
        )
        .respond(prompts::PROFILE_REFINE, echo_refine)
        .respond(prompts::VERIFY_MANIFESTED, verify_by_text)
        .always(prompts::GENERATE_RESPONSE, DEMO_REPLY)
        .always(prompts::PREMATCH_PERSONA, "Personality Traits:\n- supportive\n- patient listener")
        .always(prompts::SEEKER_RESPONSE, "I've just been feeling overwhelmed lately.")
        .always(prompts::ANNOTATE_SEEKER, "NONE")
        .always(prompts::ANNOTATE_SUPPORTER, "NONE")
        .always(prompts::JUDGE_DPO, "A");
    mock
}

/// Demo backend with the golden conversation queued ahead of the rules.
pub fn golden_backend() -> Arc<MockBackend> {
    let mock = demo_backend();
    let compatible = |why: &str| json!({"compatible": true, "conflicting_ids": [], "rationale": why}).to_string();

    // turn 1
    mock.push(
        prompts::DETECT_USER_ATTRIBUTES,
        r#"[{"category": "Occupation", "text": "works in IT"}, {"category": "Other Experiences", "text": "facing debts"}]"#,
    );
    mock.push(prompts::MATCH_ATTRIBUTE, "previously owned a small housecleaning business");
    mock.push(prompts::MATCH_ATTRIBUTE, "faced financial trouble before");
    // turn 2: the first candidate clashes with the manifested occupation
    mock.push(prompts::DETECT_USER_ATTRIBUTES, r#"[{"category": "Routines or Habits", "text": "sleeps poorly"}]"#);
    mock.push(prompts::MATCH_ATTRIBUTE, "works night shifts at a hospital");
    mock.push(
        prompts::CHECK_COMPATIBILITY,
        json!({"compatible": false, "conflicting_ids": [1], "rationale": "a hospital job contradicts running a housecleaning business"})
            .to_string(),
    );
    mock.push(prompts::MATCH_ATTRIBUTE, "used to lie awake worrying");
    mock.push(prompts::CHECK_COMPATIBILITY, compatible("no conflict"));
    // turn 3
    mock.push(prompts::DETECT_USER_ATTRIBUTES, "NONE");
    // turn 4, followed by the periodic refinement
    mock.push(
        prompts::DETECT_USER_ATTRIBUTES,
        r#"[{"category": "Age", "text": "around 30"}, {"category": "Family Relationships", "text": "single"}]"#,
    );
    mock.push(prompts::MATCH_ATTRIBUTE, "in their mid thirties");
    mock.push(prompts::CHECK_COMPATIBILITY, compatible("no conflict"));
    mock.push(prompts::MATCH_ATTRIBUTE, "went through a divorce");
    mock.push(prompts::CHECK_COMPATIBILITY, compatible("no conflict"));
    mock.push(
        prompts::PROFILE_REFINE,
        "Age:\n- in their mid thirties\nOccupation:\n- previously owned a small housecleaning business\n\
         Family Relationships:\n- went through a divorce\nRoutines or Habits:\n- used to lie awake worrying\n\
         Personality Traits:\n- supportive\nOther Experiences:\n- faced financial trouble before",
    );
    for reply in GOLDEN_REPLIES {
        mock.push(prompts::GENERATE_RESPONSE, reply);
    }
    mock
}

/// Adaptive setting with default constants.
pub fn golden_config() -> EngineConfig {
    EngineConfig::with_setting(PersonaSetting::Ours)
}

/// Engine over `mock` with the prompt-driven matcher.
pub fn engine_for(mock: Arc<MockBackend>) -> Engine {
    let gateway = Gateway::mock(mock);
    let catalog = Arc::new(PromptCatalog::builtin());
    Engine::new(gateway.clone(), Arc::new(PromptMatcher::new(gateway, catalog.clone())), catalog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::EventKind;

    #[test]
    fn golden_run_shape() {
        let engine = engine_for(golden_backend());
        let mut state = engine.create_session("golden", golden_config(), None, None).unwrap();
        for (msg, reply) in GOLDEN_SCRIPT.iter().zip(GOLDEN_REPLIES) {
            let out = engine.step(&state, msg).unwrap();
            assert_eq!(out.reply, reply);
            state = out.state;
        }
        let refined: Vec<u32> = state.trace.iter().filter(|e| e.kind == EventKind::ProfileRefined).map(|e| e.turn).collect();
        assert_eq!(refined, vec![4]);
        assert!(state.trace.iter().all(|e| e.kind != EventKind::Warning), "{:#?}", state.trace);
        assert!(state.trace.iter().any(|e| e.kind == EventKind::CompatibilityRejected));
        let marked: Vec<&str> = state
            .agent_persona
            .attributes()
            .iter()
            .filter(|a| a.is_inadaptable())
            .map(|a| a.text.as_str())
            .collect();
        assert_eq!(marked, vec!["previously owned a small housecleaning business", "went through a divorce"]);
        // after the script the rules take over
        let out = engine.step(&state, "anything else").unwrap();
        assert_eq!(out.reply, DEMO_REPLY);
    }
}
