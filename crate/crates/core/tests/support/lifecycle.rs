//! Persona lifecycle properties over generated personas, model outputs and
//! conversations. Shared by the core proptest suite and the acceptance
//! runner.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use personaflow::adapter::{adapt, MatchCandidate, MatchError, Matcher, PromptMatcher};
use personaflow::detection::DetectedAttribute;
use personaflow::engine::{Engine, EngineConfig, PersonaSetting};
use personaflow::events::{is_phase_ordered, EventKind};
use personaflow::gateway::{Gateway, MockBackend};
use personaflow::prompts::{self, PromptCatalog};
use personaflow::refiner::{merge_refined, refine, RefineSampling, RefinementInput};
use personaflow::{AttrId, Persona, PersonaCategory, Role};
use personaflow::persona::{AttributeOrigin, AttributeStatus};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const TEXTS: [&str; 12] = [
    "works in IT",
    "anxious",
    "single",
    "married",
    "runs daily",
    "owns a cat",
    "nurse",
    "teacher",
    "lives in Ohio",
    "calm",
    "facing debts",
    "plays chess",
];

const CATEGORIES: [PersonaCategory; 5] = [
    PersonaCategory::Occupation,
    PersonaCategory::PersonalityTraits,
    PersonaCategory::FamilyRelationships,
    PersonaCategory::RoutinesOrHabits,
    PersonaCategory::OtherExperiences,
];

pub const CASES: u32 = 1000;

/// (category, text, manifested turn if inadaptable)
fn persona_spec() -> impl Strategy<Value = Vec<(usize, usize, Option<u32>)>> {
    prop::collection::vec((0..CATEGORIES.len(), 0..TEXTS.len(), prop::option::of(1u32..10)), 0..8)
}

fn build(layout: &[(usize, usize, Option<u32>)]) -> Persona {
    let mut p = Persona::new(Role::Agent);
    for (c, t, marked) in layout {
        let id = p.add_attribute(CATEGORIES[*c], TEXTS[*t], AttributeOrigin::Initial, 0).unwrap();
        if let Some(turn) = marked {
            p.mark_inadaptable(id, *turn).unwrap();
        }
    }
    p
}

fn frozen(p: &Persona) -> BTreeMap<AttrId, (PersonaCategory, String, Option<u32>)> {
    p.attributes()
        .iter()
        .filter(|a| a.is_inadaptable())
        .map(|a| (a.id, (a.category, a.text.clone(), a.manifested_turn)))
        .collect()
}

fn assert_frozen_kept(before: &Persona, after: &Persona) {
    for (id, (category, text, turn)) in frozen(before) {
        let a = after.get(id).unwrap_or_else(|| panic!("inadaptable {id} dropped"));
        assert_eq!(a.status, AttributeStatus::Inadaptable);
        assert_eq!((a.category, &a.text, a.manifested_turn), (category, &text, turn));
    }
}

/// Proposes vocabulary texts by attempt; sometimes repeats an existing one.
struct VocabMatcher;

impl Matcher for VocabMatcher {
    fn propose(&self, user_attr: &DetectedAttribute, _: &Persona, _: &Persona, attempt: u32) -> Result<MatchCandidate, MatchError> {
        let seed = user_attr.text.len() + attempt as usize;
        Ok(MatchCandidate {
            category: user_attr.category,
            text: TEXTS[seed % TEXTS.len()].to_string(),
            attempt,
        })
    }

    fn name(&self) -> &'static str {
        "vocab"
    }
}

pub type AdaptInput = (Vec<(usize, usize, Option<u32>)>, Vec<(usize, usize)>, Vec<Option<bool>>, u32);

pub fn adapt_inputs() -> impl Strategy<Value = AdaptInput> {
    (
        persona_spec(),
        prop::collection::vec((0..CATEGORIES.len(), 0..TEXTS.len()), 1..4),
        prop::collection::vec(prop::option::of(any::<bool>()), 64),
        1u32..5,
    )
}

/// Attribute-level adaptation only appends, and each detected attribute
/// costs at most `max_iters` compatibility checks.
pub fn adapt_case((layout, detected, verdicts, max_iters): AdaptInput) -> Result<(), TestCaseError> {
    let agent = build(&layout);
    let mock = MockBackend::new();
    for v in &verdicts {
        match v {
            Some(ok) => mock.push(prompts::CHECK_COMPATIBILITY, json!({"compatible": ok, "conflicting_ids": [], "rationale": "r"}).to_string()),
            None => mock.push(prompts::CHECK_COMPATIBILITY, "unsure"),
        };
    }
    let attrs: Vec<DetectedAttribute> = detected
        .iter()
        .map(|(c, t)| DetectedAttribute { category: CATEGORIES[*c], text: TEXTS[*t].to_string() })
        .collect();
    let out = adapt(
        &attrs,
        &Persona::new(Role::User),
        &agent,
        &VocabMatcher,
        &Gateway::mock(mock.clone()),
        &PromptCatalog::builtin(),
        max_iters,
        3,
    )
    .unwrap();

    // existing attributes are an untouched prefix
    prop_assert_eq!(&out.persona.attributes()[..agent.len()], agent.attributes());
    for a in &out.persona.attributes()[agent.len()..] {
        prop_assert_eq!(a.origin, AttributeOrigin::AttrMatch);
        prop_assert_eq!(a.status, AttributeStatus::Adaptable);
    }
    prop_assert_eq!(out.matched.len(), out.persona.len() - agent.len());

    // compatibility calls per detected attribute
    let calls = mock.calls_for(prompts::CHECK_COMPATIBILITY).len();
    // each detected attribute's events end with AttrMatched or AttrSkipped
    let mut per_attr: Vec<usize> = vec![0];
    for e in &out.events {
        let checked = match e.kind {
            EventKind::CompatibilityRejected => true,
            EventKind::AttrMatched => e.payload["existing"] == false,
            _ => false,
        };
        if checked {
            *per_attr.last_mut().unwrap() += 1;
        }
        if let Some(attempt) = e.payload.get("attempt") {
            prop_assert!(attempt.as_u64().unwrap() <= u64::from(max_iters));
        }
        if matches!(e.kind, EventKind::AttrMatched | EventKind::AttrSkipped) {
            per_attr.push(0);
        }
    }
    prop_assert_eq!(per_attr.len(), attrs.len() + 1);
    if agent.inadaptable_set().is_empty() {
        prop_assert_eq!(calls, 0);
    } else {
        prop_assert_eq!(calls, per_attr.iter().sum::<usize>());
    }
    prop_assert!(calls <= max_iters as usize * attrs.len());
    for n in &per_attr {
        prop_assert!(*n <= max_iters as usize);
    }
    Ok(())
}

pub type RefineInput = (Vec<(usize, usize, Option<u32>)>, Vec<(usize, usize, u8)>, u16);

pub fn refine_inputs() -> impl Strategy<Value = RefineInput> {
    (
        persona_spec(),
        prop::collection::vec((0..CATEGORIES.len(), 0..TEXTS.len(), 0u8..3), 0..10),
        any::<u16>(),
    )
}

/// Profile refinement keeps the inadaptable set verbatim.
pub fn refine_case((layout, lines, keep_mask): RefineInput) -> Result<(), TestCaseError> {
    let previous = build(&layout);
    let mut parsed: Vec<(PersonaCategory, String)> = previous
        .attributes()
        .iter()
        .enumerate()
        .filter(|(i, _)| keep_mask & (1 << i) != 0)
        .map(|(_, a)| (a.category, a.text.to_uppercase()))
        .collect();
    for (c, t, style) in &lines {
        let text = match style {
            0 => TEXTS[*t].to_string(),
            1 => format!("{}!", TEXTS[*t]),
            _ => format!("{} sometimes", TEXTS[*t]),
        };
        parsed.push((CATEGORIES[*c], text));
    }
    let input = RefinementInput::from_personas(&Persona::new(Role::User), &previous, &[]);
    let (next, report) = merge_refined(&input, &parsed, 4);
    assert_frozen_kept(&previous, &next);
    prop_assert_eq!(frozen(&previous), frozen(&next));
    prop_assert!(next.next_id() >= previous.next_id());
    for id in &report.removed {
        prop_assert!(!previous.get(*id).unwrap().is_inadaptable());
    }

    // the same through the model round trip
    let mock = MockBackend::new();
    let rendered = if parsed.is_empty() { "garbage".to_string() } else {
        parsed.iter().map(|(c, t)| format!("{}:\n- {t}\n", c.label())).collect()
    };
    mock.always(prompts::PROFILE_REFINE, rendered);
    let (via_model, _) = refine(&input, &Gateway::mock(mock), &PromptCatalog::builtin(), RefineSampling::default(), 4).unwrap();
    assert_frozen_kept(&previous, &via_model);
    Ok(())
}

pub fn engine_inputs() -> impl Strategy<Value = (u64, usize, u32)> {
    (any::<u64>(), 1usize..9, 1u32..5)
}

/// Whole-engine runs over a chaotic backend: frozen attributes never thaw
/// or change, steps replay exactly and phases stay ordered.
pub fn engine_case((seed, turns, k): (u64, usize, u32)) -> Result<(), TestCaseError> {
    let catalog = Arc::new(PromptCatalog::builtin());
    let mock = chaotic_backend(seed);
    let gateway = Gateway::mock(mock.clone());
    let engine = Engine::new(gateway.clone(), Arc::new(PromptMatcher::new(gateway, catalog.clone())), catalog);
    let config = EngineConfig { refine_period: k, ..EngineConfig::with_setting(PersonaSetting::Ours) };
    let mut state = engine.create_session("p", config, None, None).unwrap();
    for turn in 0..turns {
        let before_calls = mock.calls_for(prompts::CHECK_COMPATIBILITY).len();
        let out = match engine.step(&state, &format!("message {turn}: {}", TEXTS[turn % TEXTS.len()])) {
            Ok(out) => out,
            Err(e) => {
                prop_assert!(e.is_backend());
                continue;
            }
        };
        assert_frozen_kept(&state.agent_persona, &out.state.agent_persona);
        prop_assert!(is_phase_ordered(&out.events));
        prop_assert_eq!(&state.apply(&out.record).unwrap(), &out.state);
        let detected = out.events.iter().filter(|e| e.kind == EventKind::UserAttrDetected).count();
        let calls = mock.calls_for(prompts::CHECK_COMPATIBILITY).len() - before_calls;
        prop_assert!(calls <= detected * out.state.config.max_iters as usize);
        state = out.state;
    }
    Ok(())
}

/// Every model task answers from a seeded generator, including malformed
/// output and outright failures.
fn chaotic_backend(seed: u64) -> Arc<MockBackend> {
    let rng = Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(seed)));
    let mock = MockBackend::new();
    let pick = |rng: &Mutex<ChaCha8Rng>| {
        let mut r = rng.lock().unwrap();
        (r.gen_range(0..CATEGORIES.len()), r.gen_range(0..TEXTS.len()), r.gen_range(0..10u32))
    };

    let r = rng.clone();
    mock.respond(prompts::DETECT_USER_ATTRIBUTES, move |_, _| {
        let (c, t, roll) = pick(&r);
        Some(match roll {
            0 => "???".into(),
            1..=3 => "NONE".into(),
            _ => json!([{"category": CATEGORIES[c].label(), "text": TEXTS[t]}]).to_string(),
        })
    });
    let r = rng.clone();
    mock.respond(prompts::MATCH_ATTRIBUTE, move |_, _| {
        let (_, t, roll) = pick(&r);
        (roll != 0).then(|| TEXTS[t].to_string())
    });
    let r = rng.clone();
    mock.respond(prompts::CHECK_COMPATIBILITY, move |_, _| {
        let (_, _, roll) = pick(&r);
        Some(match roll {
            0 => "hmm".into(),
            1..=4 => r#"{"compatible": false, "conflicting_ids": [], "rationale": "clash"}"#.into(),
            _ => r#"{"compatible": true, "conflicting_ids": [], "rationale": "ok"}"#.into(),
        })
    });
    let r = rng.clone();
    mock.respond(prompts::PROFILE_REFINE, move |req, _| {
        let prompt = &req.messages.last()?.content;
        let block = prompt.rsplit("[PERSONA]\n").next()?.split("\n[/PERSONA]").next()?;
        let mut out = String::new();
        for line in block.lines() {
            let (_, t, roll) = pick(&r);
            match roll {
                0 | 1 => {}
                2 => out.push_str(&format!("- {} lately\n", TEXTS[t])),
                _ => {
                    out.push_str(line);
                    out.push('\n');
                }
            }
        }
        let (c, t, roll) = pick(&r);
        if roll == 0 {
            return Some("no idea".into());
        }
        out.push_str(&format!("{}:\n- {}\n", CATEGORIES[c].label(), TEXTS[t]));
        Some(out)
    });
    let r = rng.clone();
    mock.respond(prompts::GENERATE_RESPONSE, move |_, _| {
        let (_, t, roll) = pick(&r);
        (roll != 0).then(|| format!("I hear you, I am {} too.", TEXTS[t]))
    });
    let r = rng;
    mock.respond(prompts::VERIFY_MANIFESTED, move |req, _| {
        let prompt = &req.messages.last()?.content;
        let candidates = prompt.rsplit("Candidates:\n").next()?;
        let ids: Vec<u64> = candidates
            .lines()
            .filter_map(|l| l.strip_prefix('[')?.split_once(']')?.0.parse().ok())
            .filter(|_| pick(&r).2 < 4)
            .collect();
        Some(json!(ids).to_string())
    });
    mock
}
