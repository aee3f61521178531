//! Desk-scale world: synthetic persona pairs and a rule-based mock backend
//! standing in for the seeker, detector, verifier, refiner and generator.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{alignment_curve, simulate, AlignmentCurve, SimError, SimulationConfig, SimulationResult};
use crate::adapter::OracleMatcher;
use crate::engine::{Engine, EngineConfig, PersonaSetting};
use crate::gateway::{ChatRequest, Gateway, MockBackend};
use crate::metrics::IdfModel;
use crate::persona::{AttributeOrigin, Persona, PersonaAttribute, PersonaCategory, Role, EMPTY_PROFILE};
use crate::prompts::{self, PromptCatalog};

const GENERIC_REPLY: &str = "That sounds really hard. I'm here with you, tell me more.";

// (seeker options, supporter options) per category.
fn vocabulary(category: PersonaCategory) -> (&'static [&'static str], &'static [&'static str]) {
    use PersonaCategory::*;
    match category {
        Gender => (&["identifies as female", "identifies as male"], &["woman", "man"]),
        Age => (
            &["around thirty years old", "in her early twenties", "recently turned fifty"],
            &["late thirties", "mid twenties", "nearly sixty"],
        ),
        Location => (
            &["lives in Ohio", "moved to Seattle", "grew up in rural Texas"],
            &["based in Chicago", "settled near Portland", "raised on a Kansas farm"],
        ),
        Occupation => (
            &["works in IT", "nurse on night shifts", "warehouse forklift driver"],
            &["previously owned a small housecleaning business", "retired paramedic", "former logistics supervisor"],
        ),
        Education => (
            &["dropped out of college", "finishing a nursing degree", "studying accounting online"],
            &["earned a GED later in life", "completed a psychology diploma", "took evening bookkeeping classes"],
        ),
        FamilyRelationships => (
            &["recently divorced", "caring for an elderly mother", "single parent of two"],
            &["went through a separation", "looked after an ailing father", "raised three kids alone"],
        ),
        RoutinesOrHabits => (
            &["stays up scrolling until 3am", "skips breakfast most days", "runs every morning"],
            &["walks the dog at dawn", "meditates before bed", "cooks soup on Sundays"],
        ),
        GoalsOrPlans => (
            &["wants to pay off debts", "hopes to change careers", "plans to move abroad"],
            &["cleared a mortgage early", "switched fields at forty", "lived overseas for years"],
        ),
        SocialRelationships => (
            &["drifted apart from close friends", "argues with coworkers", "has few people to confide in"],
            &["rebuilt a friendship circle", "mentors younger colleagues", "leans on a neighbor"],
        ),
        PersonalityTraits => (
            &["anxious", "introverted", "perfectionist"],
            &["supportive", "understanding", "calm"],
        ),
        OtherExperiences => (
            &["lost a job during layoffs", "survived a car accident", "struggled with insomnia"],
            &["faced financial trouble before", "recovered from a serious injury", "overcame burnout"],
        ),
    }
}

/// Persona the StaticSupporter setting uses for every dialogue. Its words do
/// not occur in the synthetic vocabularies.
pub fn static_persona() -> Persona {
    use PersonaCategory::*;
    Persona::from_pairs(
        Role::Agent,
        AttributeOrigin::Initial,
        [
            (Gender, "nonbinary"),
            (Age, "eighty plus"),
            (Location, "Reykjavik resident"),
            (Occupation, "lighthouse keeper"),
            (Education, "violin conservatory graduate"),
            (RoutinesOrHabits, "collects antique stamps"),
            (GoalsOrPlans, "wants to sail solo"),
            (PersonalityTraits, "whimsical"),
        ],
    )
    .expect("static persona is valid")
}

/// One synthetic dialogue: seeker persona, ground-truth supporter persona
/// and the order the seeker reveals attributes in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskWorld {
    pub seeker: Persona,
    pub supporter: Persona,
    pub reveal_order: Vec<String>,
}

impl DeskWorld {
    /// Supporter attribute in a category the seeker never talks about.
    pub fn inferable(&self) -> Option<&PersonaAttribute> {
        let seeker_cats: Vec<_> = self.seeker.attributes().iter().map(|a| a.category).collect();
        self.supporter.attributes().iter().find(|a| !seeker_cats.contains(&a.category))
    }
}

/// `count` seeded worlds. The seeker has 8 attributes in distinct
/// categories; the supporter covers 6 of them plus one other category.
pub fn synthetic_worlds(count: usize, seed: u64) -> Vec<DeskWorld> {
    (0..count as u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i));
            let mut categories = PersonaCategory::ALL.to_vec();
            categories.shuffle(&mut rng);
            let (seeker_cats, rest) = categories.split_at(8);
            let mut seeker = Vec::new();
            let mut supporter = Vec::new();
            for (j, &c) in seeker_cats.iter().enumerate() {
                let (s, p) = vocabulary(c);
                seeker.push((c, *s.choose(&mut rng).expect("non-empty vocabulary")));
                if j < 6 {
                    supporter.push((c, *p.choose(&mut rng).expect("non-empty vocabulary")));
                }
            }
            let extra = rest[0];
            supporter.push((extra, *vocabulary(extra).1.choose(&mut rng).expect("non-empty vocabulary")));
            seeker.sort_by_key(|(c, _)| *c);
            supporter.sort_by_key(|(c, _)| *c);
            let mut reveal_order: Vec<String> = seeker.iter().map(|(_, t)| t.to_string()).collect();
            reveal_order.shuffle(&mut rng);
            DeskWorld {
                seeker: Persona::from_pairs(Role::User, AttributeOrigin::Annotation, seeker).expect("valid seeker"),
                supporter: Persona::from_pairs(Role::Agent, AttributeOrigin::Annotation, supporter).expect("valid supporter"),
                reveal_order,
            }
        })
        .collect()
}

fn prompt_text(req: &ChatRequest) -> &str {
    req.messages.last().map(|m| m.content.as_str()).unwrap_or_default()
}

fn after_last<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.rfind(marker).map(|i| &text[i + marker.len()..])
}

fn seeker_message(attribute: &str) -> String {
    format!("I keep thinking about it. For context, I {attribute}.")
}

fn line_value<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    after_last(text, prefix).map(|rest| rest.lines().next().unwrap_or_default())
}

/// Mock backend implementing the desk world's rules for one dialogue.
pub fn desk_backend(world: &DeskWorld, static_persona: &Persona) -> Arc<MockBackend> {
    let mock = MockBackend::new();

    let order = world.reveal_order.clone();
    mock.respond(prompts::SEEKER_RESPONSE, move |req, _| {
        let history = after_last(prompt_text(req), "Conversation so far:\n")?;
        let round = history.lines().filter(|l| l.starts_with("Seeker: ")).count();
        Some(seeker_message(&order[round % order.len()]))
    });

    let seeker = world.seeker.clone();
    mock.respond(prompts::DETECT_USER_ATTRIBUTES, move |req, _| {
        let utterance = line_value(prompt_text(req), "Latest seeker utterance: ")?;
        let found: Vec<_> = seeker
            .attributes()
            .iter()
            .filter(|a| utterance.contains(a.text.as_str()))
            .map(|a| json!({"category": a.category.label(), "text": a.text}))
            .collect();
        Some(if found.is_empty() { "NONE".into() } else { json!(found).to_string() })
    });

    mock.always(
        prompts::CHECK_COMPATIBILITY,
        r#"{"compatible": true, "conflicting_ids": [], "rationale": "no conflict"}"#,
    );

    // Refinement fills in the one supporter attribute no seeker disclosure
    // can surface.
    let inferred = world.inferable().map(|a| (a.category.label(), a.text.clone()));
    mock.respond(prompts::PROFILE_REFINE, move |req, _| {
        let block = after_last(prompt_text(req), "[PERSONA]\n")?.split("\n[/PERSONA]").next()?;
        let mut out = if block.trim() == EMPTY_PROFILE { String::new() } else { format!("{block}\n") };
        if let Some((label, text)) = &inferred {
            if !block.contains(text.as_str()) {
                out.push_str(&format!("{label}:\n- {text}\n"));
            }
        }
        Some(out)
    });

    mock.respond(prompts::GENERATE_RESPONSE, |req, _| {
        let system = req.messages.first().map(|m| m.content.as_str()).unwrap_or_default();
        let reply = match system.lines().rev().find_map(|l| l.strip_prefix("- ")) {
            Some(attr) => format!("I hear you. Speaking for myself, {attr}, so I get some of it. How are you holding up?"),
            None => GENERIC_REPLY.to_string(),
        };
        Some(reply)
    });

    mock.respond(prompts::VERIFY_MANIFESTED, |req, _| {
        let text = prompt_text(req);
        let utterance = line_value(text, "Utterance: ")?;
        let candidates = after_last(text, "Candidates:\n")?.split("\nAnswer:").next()?;
        let ids: Vec<u64> = candidates
            .lines()
            .filter_map(|l| {
                let (id, attr) = l.strip_prefix('[')?.split_once("] ")?;
                utterance.contains(attr).then(|| id.parse().ok())?
            })
            .collect();
        Some(if ids.is_empty() { "NONE".into() } else { json!(ids).to_string() })
    });

    let fallback = static_persona.render_profile();
    mock.respond(prompts::PREMATCH_PERSONA, move |req, _| {
        let survey = after_last(prompt_text(req), "survey:\n\n")?.split("\n\nWrite a supporter persona").next()?;
        let digest = Sha256::digest(survey.as_bytes());
        let picked: Vec<(PersonaCategory, &str)> = survey
            .lines()
            .filter_map(|l| l.trim().strip_suffix(':'))
            .map(PersonaCategory::coerce)
            .enumerate()
            .map(|(i, c)| {
                let options = vocabulary(c).1;
                (c, options[usize::from(digest[i % digest.len()]) % options.len()])
            })
            .collect();
        if picked.is_empty() {
            return Some(fallback.clone());
        }
        let persona = Persona::from_pairs(Role::Agent, AttributeOrigin::Initial, picked).ok()?;
        Some(persona.render_profile())
    });

    mock
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskRun {
    pub dialogue: usize,
    pub setting: PersonaSetting,
    pub ground_truth: Persona,
    pub result: SimulationResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeskSuite {
    pub worlds: Vec<DeskWorld>,
    pub runs: Vec<DeskRun>,
    /// IDF statistics over every ground-truth and static persona text.
    pub model: IdfModel,
}

impl DeskSuite {
    pub fn curves(&self, sample_turns: &[u32]) -> (Vec<AlignmentCurve>, Vec<String>) {
        let sessions: Vec<_> = self.runs.iter().map(|r| (&r.result.state, &r.ground_truth)).collect();
        alignment_curve(&sessions, &self.model, sample_turns)
    }
}

/// Simulates every world under every configured setting with the oracle
/// matcher and the desk backend.
pub fn run_desk_suite(dialogues: usize, sim: &SimulationConfig, engine_config: &EngineConfig) -> Result<DeskSuite, SimError> {
    let worlds = synthetic_worlds(dialogues, sim.seed);
    let static_p = sim.static_persona.clone().unwrap_or_else(static_persona);
    let sim = SimulationConfig {
        static_persona: Some(static_p.clone()),
        ..sim.clone()
    };
    let catalog = Arc::new(PromptCatalog::builtin());
    let jobs: Vec<(usize, PersonaSetting)> = (0..worlds.len())
        .flat_map(|i| sim.settings.iter().map(move |s| (i, *s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(i, setting)| {
            let world = &worlds[i];
            let gateway = Gateway::mock(desk_backend(world, &static_p));
            let engine = Engine::new(gateway.clone(), Arc::new(OracleMatcher::new(world.supporter.clone())), catalog.clone());
            let mut config = engine_config.clone();
            config.setting = setting;
            let result = simulate(&format!("desk-{i}-{setting}"), &world.seeker, &engine, config, &sim, &gateway)?;
            Ok(DeskRun {
                dialogue: i,
                setting,
                ground_truth: world.supporter.clone(),
                result,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let corpus = worlds
        .iter()
        .flat_map(|w| w.seeker.texts().into_iter().chain(w.supporter.texts()).map(str::to_string))
        .chain(static_p.texts().into_iter().map(str::to_string));
    let model = IdfModel::build(corpus)?;
    Ok(DeskSuite { worlds, runs, model })
}
