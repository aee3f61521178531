//! Per-turn orchestration and session state.
//!
//! A step never mutates its input: it computes a [`StepRecord`] and the new
//! state is `state.apply(&record)`. Records are what the service logs, so
//! replaying them over a snapshot reproduces the session exactly.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adapter::{adapt, Matcher, DEFAULT_MAX_ITERS};
use crate::detection::{ask_with_reprompt, detect_manifested, detect_user_attributes, index_persona, OutputParseError};
use crate::events::{AdaptationEvent, EventKind};
use crate::gateway::{ChatMessage, Gateway, GatewayError};
use crate::persona::{
    parse_profile, AttrId, AttributeOrigin, DialogueHistory, Persona, PersonaAttribute, PersonaError, Role,
};
use crate::prompts::{self, PromptCatalog, PromptError};
use crate::refiner::{refine, should_refine, RefineReport, RefineSampling, RefinementInput, DEFAULT_REFINE_PERIOD};

pub const DEFAULT_TOP_M: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PersonaSetting {
    WithoutPersona,
    StaticSupporter,
    PreMatch,
    Ours,
}

impl PersonaSetting {
    pub const ALL: [PersonaSetting; 4] = [
        PersonaSetting::WithoutPersona,
        PersonaSetting::StaticSupporter,
        PersonaSetting::PreMatch,
        PersonaSetting::Ours,
    ];

    pub fn grounded(self) -> bool {
        self != PersonaSetting::WithoutPersona
    }
}

impl std::str::FromStr for PersonaSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
        match key.as_str() {
            "withoutpersona" | "wopersona" | "none" => Ok(PersonaSetting::WithoutPersona),
            "staticsupporter" | "static" | "supporter" => Ok(PersonaSetting::StaticSupporter),
            "prematch" => Ok(PersonaSetting::PreMatch),
            "ours" | "adaptive" => Ok(PersonaSetting::Ours),
            _ => Err(format!("unknown persona setting {s:?}")),
        }
    }
}

impl std::fmt::Display for PersonaSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub refine_period: u32,
    pub top_m: usize,
    pub max_iters: u32,
    pub setting: PersonaSetting,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            refine_period: DEFAULT_REFINE_PERIOD,
            top_m: DEFAULT_TOP_M,
            max_iters: DEFAULT_MAX_ITERS,
            setting: PersonaSetting::Ours,
            temperature: 0.8,
            top_p: 0.9,
            max_tokens: 256,
        }
    }
}

impl EngineConfig {
    pub fn with_setting(setting: PersonaSetting) -> Self {
        EngineConfig {
            setting,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::Config(m.to_string()));
        if self.refine_period < 1 {
            return bad("refine_period must be >= 1");
        }
        if self.top_m < 1 {
            return bad("top_m must be >= 1");
        }
        if self.max_iters < 1 {
            return bad("max_iters must be >= 1");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be >= 0");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if self.max_tokens < 1 {
            return bad("max_tokens must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("user message is empty")]
    EmptyMessage,
    #[error("generation failed: {0}")]
    Generation(GatewayError),
    #[error("pre-match persona generation failed: {0}")]
    PreMatch(String),
    #[error("operation not available for the {0} setting")]
    Setting(PersonaSetting),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("persona snapshot: {0}")]
    Snapshot(String),
}

impl EngineError {
    /// True when the failure came from the model backend rather than the input.
    pub fn is_backend(&self) -> bool {
        matches!(self, EngineError::Generation(_) | EngineError::PreMatch(_))
    }
}

pub fn persona_digest(persona: &Persona) -> String {
    let json = serde_json::to_string(persona).expect("persona serializes");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Agent persona change over one step, stored instead of full copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaDelta {
    pub turn: u32,
    /// Attributes that are new or differ from the previous version.
    pub upserted: Vec<PersonaAttribute>,
    pub removed: Vec<AttrId>,
    /// Full id order of the resulting persona.
    pub order: Vec<AttrId>,
    pub next_id: u64,
    /// SHA-256 of the resulting persona JSON.
    pub digest: String,
}

impl PersonaDelta {
    pub fn between(previous: &Persona, next: &Persona, turn: u32) -> Self {
        PersonaDelta {
            turn,
            upserted: next
                .attributes()
                .iter()
                .filter(|a| previous.get(a.id) != Some(*a))
                .cloned()
                .collect(),
            removed: previous
                .attributes()
                .iter()
                .map(|a| a.id)
                .filter(|id| next.get(*id).is_none())
                .collect(),
            order: next.attributes().iter().map(|a| a.id).collect(),
            next_id: next.next_id(),
            digest: persona_digest(next),
        }
    }

    pub fn is_noop(&self) -> bool {
        self.upserted.is_empty() && self.removed.is_empty()
    }

    pub fn apply(&self, previous: &Persona) -> Result<Persona, EngineError> {
        let mut pool: BTreeMap<AttrId, PersonaAttribute> =
            previous.attributes().iter().map(|a| (a.id, a.clone())).collect();
        for id in &self.removed {
            pool.remove(id);
        }
        for a in &self.upserted {
            pool.insert(a.id, a.clone());
        }
        let attrs = self
            .order
            .iter()
            .map(|id| pool.remove(id).ok_or_else(|| EngineError::Snapshot(format!("delta misses attribute {id}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let persona = Persona::from_parts(previous.owner(), attrs, self.next_id)?;
        if persona_digest(&persona) != self.digest {
            return Err(EngineError::Snapshot(format!("digest mismatch at turn {}", self.turn)));
        }
        Ok(persona)
    }
}

/// Everything one engine step (or manual refinement) changed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub turn: u32,
    /// `None` for a manual refinement.
    pub user_message: Option<String>,
    pub reply: Option<String>,
    pub user_persona: Persona,
    pub agent_delta: PersonaDelta,
    pub pending_matched: Vec<AttrId>,
    pub events: Vec<AdaptationEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub config: EngineConfig,
    pub user_persona: Persona,
    pub agent_persona: Persona,
    pub initial_agent_persona: Persona,
    pub history: DialogueHistory,
    pub user_turn_count: u32,
    pub trace: Vec<AdaptationEvent>,
    pub deltas: Vec<PersonaDelta>,
    /// Attributes matched since the last successful refinement.
    #[serde(default)]
    pub pending_matched: Vec<AttrId>,
}

impl SessionState {
    pub fn new(session_id: impl Into<String>, config: EngineConfig, agent_persona: Persona) -> Self {
        SessionState {
            session_id: session_id.into(),
            config,
            user_persona: Persona::new(Role::User),
            initial_agent_persona: agent_persona.clone(),
            agent_persona,
            history: DialogueHistory::new(),
            user_turn_count: 0,
            trace: Vec::new(),
            deltas: Vec::new(),
            pending_matched: Vec::new(),
        }
    }

    /// Returns the state after `record`; fails if the record does not fit.
    pub fn apply(&self, record: &StepRecord) -> Result<SessionState, EngineError> {
        let mut next = self.clone();
        match (&record.user_message, &record.reply) {
            (Some(message), Some(reply)) => {
                if record.turn != self.user_turn_count + 1 {
                    return Err(EngineError::Snapshot(format!(
                        "record for turn {} applied at turn {}",
                        record.turn, self.user_turn_count
                    )));
                }
                next.history.push(Role::User, message, None)?;
                next.history.push(Role::Agent, reply, None)?;
                next.user_turn_count = record.turn;
            }
            (None, None) if record.turn == self.user_turn_count => {}
            _ => return Err(EngineError::Snapshot("malformed step record".into())),
        }
        next.agent_persona = record.agent_delta.apply(&self.agent_persona)?;
        next.user_persona = record.user_persona.clone();
        next.pending_matched = record.pending_matched.clone();
        next.trace.extend(record.events.iter().cloned());
        next.deltas.push(record.agent_delta.clone());
        Ok(next)
    }

    /// Agent persona as committed at the end of user turn `turn`; turn 0 is
    /// the initial persona.
    pub fn persona_at(&self, turn: u32) -> Result<Persona, EngineError> {
        if turn > self.user_turn_count {
            return Err(EngineError::Snapshot(format!("no snapshot for turn {turn}")));
        }
        let mut persona = self.initial_agent_persona.clone();
        for delta in self.deltas.iter().take_while(|d| d.turn <= turn) {
            persona = delta.apply(&persona)?;
        }
        Ok(persona)
    }

    pub fn events_at(&self, turn: u32) -> impl Iterator<Item = &AdaptationEvent> {
        self.trace.iter().filter(move |e| e.turn == turn)
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub reply: String,
    pub events: Vec<AdaptationEvent>,
    pub record: StepRecord,
    pub state: SessionState,
}

/// Fixed preamble, followed by the rendered persona unless the setting is
/// persona-free.
pub fn system_instruction(persona: &Persona, setting: PersonaSetting, catalog: &PromptCatalog) -> Result<String, PromptError> {
    let preamble = catalog.template(prompts::SYSTEM_PREAMBLE)?;
    if !setting.grounded() {
        return Ok(preamble.to_string());
    }
    let persona_part = catalog.render(prompts::SYSTEM_PERSONA, &[("persona", &persona.render_profile())])?;
    Ok(format!("{preamble}\n\n{persona_part}"))
}

fn manifest_payload(a: &PersonaAttribute) -> serde_json::Value {
    json!({ "attr_id": a.id, "category": a.category, "text": a.text })
}

fn refine_events(report: &RefineReport, turn: u32, manual: bool) -> AdaptationEvent {
    match &report.aborted {
        Some(reason) => AdaptationEvent::new(EventKind::RefineAborted, turn, json!({ "reason": reason, "manual": manual })),
        None => AdaptationEvent::new(
            EventKind::ProfileRefined,
            turn,
            json!({
                "added": report.added,
                "removed": report.removed,
                "reinserted": report.reinserted,
                "manual": manual,
            }),
        ),
    }
}

#[derive(Clone)]
pub struct Engine {
    gateway: Gateway,
    matcher: Arc<dyn Matcher>,
    catalog: Arc<PromptCatalog>,
}

impl Engine {
    pub fn new(gateway: Gateway, matcher: Arc<dyn Matcher>, catalog: Arc<PromptCatalog>) -> Self {
        Engine { gateway, matcher, catalog }
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn catalog(&self) -> &PromptCatalog {
        &self.catalog
    }

    pub fn matcher(&self) -> &dyn Matcher {
        self.matcher.as_ref()
    }

    pub fn create_session(
        &self,
        session_id: impl Into<String>,
        config: EngineConfig,
        survey: Option<&str>,
        static_persona: Option<Persona>,
    ) -> Result<SessionState, EngineError> {
        config.validate()?;
        let persona = match config.setting {
            PersonaSetting::WithoutPersona | PersonaSetting::Ours => Persona::new(Role::Agent),
            PersonaSetting::StaticSupporter => {
                let p = static_persona
                    .ok_or_else(|| EngineError::Config("StaticSupporter requires static_persona".into()))?;
                if p.owner() != Role::Agent {
                    return Err(EngineError::Config("static_persona must be owned by the agent".into()));
                }
                p
            }
            PersonaSetting::PreMatch => {
                let survey = survey
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| EngineError::Config("PreMatch requires a survey".into()))?;
                self.prematch_persona(survey)?
            }
        };
        Ok(SessionState::new(session_id, config, persona))
    }

    fn prematch_persona(&self, survey: &str) -> Result<Persona, EngineError> {
        let prompt = self.catalog.render(prompts::PREMATCH_PERSONA, &[("survey", survey)])?;
        let parsed = ask_with_reprompt(
            &self.gateway,
            &self.catalog,
            prompts::PREMATCH_PERSONA,
            &prompt,
            prompts::REMINDER_PROFILE,
            |_| {},
            |t| parse_profile(t).map_err(|e| OutputParseError(e.to_string())),
        )
        .map_err(|e| EngineError::PreMatch(e.to_string()))?
        .map_err(|e| EngineError::PreMatch(e.0))?;
        Ok(Persona::from_pairs(
            Role::Agent,
            AttributeOrigin::Initial,
            parsed.iter().map(|(c, t)| (*c, t.as_str())),
        )?)
    }

    fn generate(&self, state: &SessionState, history: &DialogueHistory, agent: &Persona) -> Result<String, EngineError> {
        let mut messages = vec![ChatMessage::system(system_instruction(agent, state.config.setting, &self.catalog)?)];
        messages.extend(history.turns().iter().map(|t| match t.speaker {
            Role::User => ChatMessage::user(t.text.clone()),
            Role::Agent => ChatMessage::assistant(t.text.clone()),
        }));
        let mut request = self.gateway.request(prompts::GENERATE_RESPONSE, messages);
        request.temperature = state.config.temperature;
        request.top_p = state.config.top_p;
        request.max_tokens = state.config.max_tokens;
        let reply = self.gateway.chat_one(&request).map_err(EngineError::Generation)?;
        let reply = reply.trim();
        if reply.is_empty() {
            return Err(EngineError::Generation(GatewayError::Protocol("empty completion".into())));
        }
        Ok(reply.to_string())
    }

    fn mark_manifested(&self, reply: &str, agent: &mut Persona, turn: u32, top_m: usize, events: &mut Vec<AdaptationEvent>) {
        if agent.is_empty() {
            return;
        }
        let index = match index_persona(agent, &self.gateway) {
            Ok(index) => index,
            Err(e) => {
                events.push(AdaptationEvent::warning(turn, "manifest", format!("embedding failed: {e}")));
                return;
            }
        };
        match detect_manifested(reply, agent, &index, &self.gateway, &self.catalog, top_m) {
            Ok(found) => {
                if let Some(w) = found.warning {
                    events.push(AdaptationEvent::warning(turn, "manifest", w));
                }
                for id in found.ids {
                    if agent.mark_inadaptable(id, turn) == Ok(true) {
                        let attr = agent.get(id).expect("just marked");
                        events.push(AdaptationEvent::new(EventKind::ManifestMarked, turn, manifest_payload(attr)));
                    }
                }
            }
            Err(e) => events.push(AdaptationEvent::warning(turn, "manifest", e.to_string())),
        }
    }

    /// One user turn. Detection, manifestation and refinement problems become
    /// warning or abort events; only a generation failure fails the step.
    pub fn step(&self, state: &SessionState, user_message: &str) -> Result<StepOutput, EngineError> {
        let message = user_message.trim();
        if message.is_empty() {
            return Err(EngineError::EmptyMessage);
        }
        let config = &state.config;
        let turn = state.user_turn_count + 1;
        let mut history = state.history.clone();
        history.push(Role::User, message, None)?;
        let mut user = state.user_persona.clone();
        let mut agent = state.agent_persona.clone();
        let mut pending = state.pending_matched.clone();
        let mut events = Vec::new();

        if config.setting == PersonaSetting::Ours {
            let detected = match detect_user_attributes(history.turns(), &user, &self.gateway, &self.catalog) {
                Ok(d) => {
                    if let Some(w) = d.warning {
                        events.push(AdaptationEvent::warning(turn, "detect", w));
                    }
                    d.attributes
                }
                Err(e) => {
                    events.push(AdaptationEvent::warning(turn, "detect", e.to_string()));
                    Vec::new()
                }
            };
            for d in &detected {
                let id = user.add_attribute(d.category, &d.text, AttributeOrigin::Detected, turn)?;
                events.push(AdaptationEvent::new(
                    EventKind::UserAttrDetected,
                    turn,
                    json!({ "attr_id": id, "category": d.category, "text": d.text }),
                ));
            }
            if !detected.is_empty() {
                let outcome = adapt(
                    &detected,
                    &user,
                    &agent,
                    self.matcher.as_ref(),
                    &self.gateway,
                    &self.catalog,
                    config.max_iters,
                    turn,
                )?;
                agent = outcome.persona;
                pending.extend(outcome.matched);
                events.extend(outcome.events);
            }
            if should_refine(turn, config.refine_period) {
                let (refined, report) = self.run_refine(&user, &agent, &pending, turn)?;
                if report.aborted.is_none() {
                    agent = refined;
                    pending.clear();
                }
                events.push(refine_events(&report, turn, false));
            }
        }

        let reply = self.generate(state, &history, &agent)?;

        if config.setting.grounded() {
            self.mark_manifested(&reply, &mut agent, turn, config.top_m, &mut events);
        }

        let record = StepRecord {
            turn,
            user_message: Some(message.to_string()),
            reply: Some(reply.clone()),
            user_persona: user,
            agent_delta: PersonaDelta::between(&state.agent_persona, &agent, turn),
            pending_matched: pending,
            events: events.clone(),
        };
        let next = state.apply(&record)?;
        Ok(StepOutput {
            reply,
            events,
            record,
            state: next,
        })
    }

    fn run_refine(
        &self,
        user: &Persona,
        agent: &Persona,
        pending: &[AttrId],
        turn: u32,
    ) -> Result<(Persona, RefineReport), EngineError> {
        let input = RefinementInput::from_personas(user, agent, pending);
        refine(&input, &self.gateway, &self.catalog, RefineSampling::default(), turn).map_err(|e| match e {
            crate::refiner::RefineError::Prompt(p) => EngineError::Prompt(p),
            other => EngineError::Snapshot(other.to_string()),
        })
    }

    /// Out-of-cycle refinement, identical to the periodic one. Only the
    /// adaptive setting may change its persona.
    pub fn refine_now(&self, state: &SessionState) -> Result<StepOutput, EngineError> {
        if state.config.setting != PersonaSetting::Ours {
            return Err(EngineError::Setting(state.config.setting));
        }
        let turn = state.user_turn_count;
        let (refined, report) = self.run_refine(&state.user_persona, &state.agent_persona, &state.pending_matched, turn)?;
        let (agent, pending) = if report.aborted.is_none() {
            (refined, Vec::new())
        } else {
            (state.agent_persona.clone(), state.pending_matched.clone())
        };
        let events = vec![refine_events(&report, turn, true)];
        let record = StepRecord {
            turn,
            user_message: None,
            reply: None,
            user_persona: state.user_persona.clone(),
            agent_delta: PersonaDelta::between(&state.agent_persona, &agent, turn),
            pending_matched: pending,
            events: events.clone(),
        };
        let next = state.apply(&record)?;
        Ok(StepOutput {
            reply: String::new(),
            events,
            record,
            state: next,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{EchoMatcher, OracleMatcher};
    use crate::events::is_phase_ordered;
    use crate::gateway::MockBackend;
    use crate::persona::PersonaCategory;

    fn engine_with(mock: &Arc<MockBackend>, matcher: Arc<dyn Matcher>) -> Engine {
        Engine::new(Gateway::mock(mock.clone()), matcher, Arc::new(PromptCatalog::builtin()))
    }

    fn static_persona(n: usize) -> Persona {
        let texts = [
            "works as a counselor",
            "in their forties",
            "lives in a small town",
            "married with two kids",
            "enjoys gardening",
            "patient and calm",
            "studied psychology",
            "volunteers at a shelter",
        ];
        Persona::from_pairs(
            Role::Agent,
            AttributeOrigin::Initial,
            texts.iter().take(n).enumerate().map(|(i, t)| (PersonaCategory::ALL[i % 11], *t)),
        )
        .unwrap()
    }

    #[test]
    fn create_session_per_setting() {
        let mock = MockBackend::new();
        let e = engine_with(&mock, Arc::new(EchoMatcher));
        let s = e.create_session("a", EngineConfig::default(), None, None).unwrap();
        assert!(s.agent_persona.is_empty());
        let s = e
            .create_session("b", EngineConfig::with_setting(PersonaSetting::StaticSupporter), None, Some(static_persona(8)))
            .unwrap();
        assert_eq!(s.agent_persona.len(), 8);
        assert!(matches!(
            e.create_session("c", EngineConfig::with_setting(PersonaSetting::PreMatch), None, None),
            Err(EngineError::Config(_))
        ));
        assert!(matches!(
            e.create_session("d", EngineConfig::with_setting(PersonaSetting::StaticSupporter), None, None),
            Err(EngineError::Config(_))
        ));
        mock.push(
            prompts::PREMATCH_PERSONA,
            "Age:\n- around 30\nOccupation:\n- nurse\n- night shifts\nLocation:\n- Ohio\nPersonality Traits:\n- warm",
        );
        let s = e
            .create_session("e", EngineConfig::with_setting(PersonaSetting::PreMatch), Some("I'm 30, stressed"), None)
            .unwrap();
        assert_eq!(s.agent_persona.len(), 5);
        let bad = EngineConfig { refine_period: 0, ..EngineConfig::default() };
        assert!(matches!(e.create_session("f", bad, None, None), Err(EngineError::Config(_))));
    }

    #[test]
    fn system_instruction_variants() {
        let cat = PromptCatalog::builtin();
        let p = static_persona(1);
        let plain = system_instruction(&p, PersonaSetting::WithoutPersona, &cat).unwrap();
        assert!(!plain.contains("Persona:"));
        let grounded = system_instruction(&p, PersonaSetting::Ours, &cat).unwrap();
        assert!(grounded.contains(&p.render_profile()));
        assert_eq!(grounded, system_instruction(&p, PersonaSetting::Ours, &cat).unwrap());
    }

    #[test]
    fn ours_step_orders_events() {
        let mock = MockBackend::new();
        mock.push(prompts::DETECT_USER_ATTRIBUTES, r#"[{"category":"Occupation","text":"works in IT"}]"#);
        mock.push(prompts::GENERATE_RESPONSE, "I used to run a housecleaning business, so long hours I get.");
        mock.push(prompts::VERIFY_MANIFESTED, "[1]");
        let gt = Persona::from_pairs(
            Role::Agent,
            AttributeOrigin::Annotation,
            [(PersonaCategory::Occupation, "previously owned a small housecleaning business")],
        )
        .unwrap();
        let e = engine_with(&mock, Arc::new(OracleMatcher::new(gt)));
        let s = e.create_session("s", EngineConfig::default(), None, None).unwrap();
        let out = e.step(&s, "I work in IT and the hours are killing me").unwrap();
        let kinds: Vec<_> = out.events.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EventKind::UserAttrDetected, EventKind::AttrMatched, EventKind::ManifestMarked]);
        assert!(is_phase_ordered(&out.events));
        assert_eq!(out.state.user_turn_count, 1);
        assert_eq!(out.state.history.len(), 2);
        assert!(out.state.agent_persona.get(AttrId(1)).unwrap().is_inadaptable());
        // the reply was generated with the adapted persona in the system prompt
        let gen = &mock.calls_for(prompts::GENERATE_RESPONSE)[0];
        assert!(gen.messages[0].content.contains("- previously owned a small housecleaning business"));
        assert_eq!((gen.temperature, gen.top_p, gen.max_tokens), (0.8, 0.9, 256));
        assert_eq!(s.user_turn_count, 0);
    }

    #[test]
    fn generation_failure_is_transactional() {
        let mock = MockBackend::new();
        mock.push(prompts::DETECT_USER_ATTRIBUTES, r#"[{"category":"Age","text":"30"}]"#);
        mock.push_error(prompts::GENERATE_RESPONSE, GatewayError::Unavailable { status: Some(503), attempts: 3, message: "x".into() });
        let e = engine_with(&mock, Arc::new(EchoMatcher));
        let s = e.create_session("s", EngineConfig::default(), None, None).unwrap();
        let before = s.clone();
        assert!(matches!(e.step(&s, "I'm 30"), Err(EngineError::Generation(_))));
        assert_eq!(s, before);
        assert_eq!(e.step(&s, "  ").unwrap_err(), EngineError::EmptyMessage);
    }

    #[test]
    fn without_persona_has_no_adaptation_events() {
        let mock = MockBackend::new();
        mock.always(prompts::GENERATE_RESPONSE, "That sounds hard.");
        let e = engine_with(&mock, Arc::new(EchoMatcher));
        let mut s = e
            .create_session("s", EngineConfig::with_setting(PersonaSetting::WithoutPersona), None, None)
            .unwrap();
        for msg in ["hi", "I work in IT", "I'm 30", "my sister is sick"] {
            s = e.step(&s, msg).unwrap().state;
        }
        assert!(s.trace.iter().all(|e| e.kind == EventKind::Warning));
        assert_eq!(mock.calls().len(), 4);
        assert!(!mock.calls()[0].messages[0].content.contains("Persona:"));
    }

    #[test]
    fn static_persona_texts_never_change() {
        let mock = MockBackend::new();
        mock.always(prompts::GENERATE_RESPONSE, "I'm a counselor, I hear you.");
        mock.always(prompts::VERIFY_MANIFESTED, "[1]");
        let e = engine_with(&mock, Arc::new(EchoMatcher));
        let mut s = e
            .create_session("s", EngineConfig::with_setting(PersonaSetting::StaticSupporter), None, Some(static_persona(8)))
            .unwrap();
        let texts = s.agent_persona.texts().iter().map(|t| t.to_string()).collect::<Vec<_>>();
        for msg in ["a", "b", "c", "d", "e"] {
            s = e.step(&s, msg).unwrap().state;
            assert_eq!(s.agent_persona.texts(), texts);
        }
        assert_eq!(s.trace.iter().filter(|e| e.kind == EventKind::ManifestMarked).count(), 1);
        assert!(matches!(e.refine_now(&s), Err(EngineError::Setting(_))));
        for t in 0..=5 {
            assert_eq!(s.persona_at(t).unwrap().texts(), texts);
        }
    }

    #[test]
    fn refine_fires_on_period_and_deltas_replay() {
        let mock = MockBackend::new();
        let e = engine_with(&mock, Arc::new(EchoMatcher));
        mock.respond(prompts::DETECT_USER_ATTRIBUTES, |req, _| {
            let p = &req.messages[0].content;
            let utterance = p[p.rfind("Latest seeker utterance: ").unwrap() + 25..].lines().next().unwrap().to_string();
            Some(format!(r#"[{{"category":"OtherExperiences","text":"{utterance}"}}]"#))
        });
        mock.always(prompts::GENERATE_RESPONSE, "ok");
        mock.always(prompts::VERIFY_MANIFESTED, "NONE");
        mock.always(prompts::PROFILE_REFINE, "Other Experiences:\n- t1\n- t3\nGoals or Plans:\n- wants a new job");
        let mut s = e.create_session("s", EngineConfig::default(), None, None).unwrap();
        for msg in ["t1", "t2", "t3", "t4", "t5"] {
            s = e.step(&s, msg).unwrap().state;
        }
        let refined: Vec<_> = s.trace.iter().filter(|e| e.kind == EventKind::ProfileRefined).collect();
        assert_eq!(refined.len(), 1);
        assert_eq!(refined[0].turn, 4);
        assert_eq!(refined[0].payload["removed"], json!([2, 4]));
        assert_eq!(s.persona_at(0).unwrap().len(), 0);
        assert_eq!(s.persona_at(3).unwrap().len(), 3);
        assert_eq!(s.persona_at(4).unwrap().texts(), vec!["t1", "t3", "wants a new job"]);
        assert_eq!(s.persona_at(5).unwrap(), s.agent_persona);
        assert!(s.persona_at(6).is_err());
        assert!(s.pending_matched == vec![AttrId(6)]);
    }

    #[test]
    fn manual_refine_abort_keeps_persona() {
        let mock = MockBackend::new();
        mock.always(prompts::PROFILE_REFINE, "no idea");
        let e = engine_with(&mock, Arc::new(EchoMatcher));
        let s = e.create_session("s", EngineConfig::default(), None, None).unwrap();
        let out = e.refine_now(&s).unwrap();
        assert_eq!(out.state.agent_persona, s.agent_persona);
        assert_eq!(out.events[0].kind, EventKind::RefineAborted);
        assert_eq!(out.state.trace.len(), 1);
        assert_eq!(s.apply(&out.record).unwrap(), out.state);
    }

    #[test]
    fn delta_detects_tampering() {
        let a = static_persona(3);
        let mut b = a.clone();
        b.mark_inadaptable(AttrId(2), 1).unwrap();
        let mut d = PersonaDelta::between(&a, &b, 1);
        assert_eq!(d.upserted.len(), 1);
        assert_eq!(d.apply(&a).unwrap(), b);
        d.upserted[0].text = "tampered".into();
        assert!(d.apply(&a).is_err());
    }

    #[test]
    fn setting_names() {
        for s in PersonaSetting::ALL {
            assert_eq!(s.to_string().parse::<PersonaSetting>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{s}\""));
        }
        assert_eq!("w/o persona".parse::<PersonaSetting>().unwrap(), PersonaSetting::WithoutPersona);
    }
}
