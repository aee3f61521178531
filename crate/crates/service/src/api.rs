use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use personaflow::engine::{Engine, EngineConfig, EngineError, PersonaSetting, StepOutput};
use personaflow::events::AdaptationEvent;
use personaflow::persona::{AttributeOrigin, Persona, PersonaCategory, Role};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::store::{SessionStore, StoreError};

#[derive(Clone)]
pub struct AppState {
    pub engine: Engine,
    pub store: Arc<SessionStore>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::Busy(_) => StatusCode::CONFLICT,
            StoreError::Exists(_) => StatusCode::CONFLICT,
            StoreError::Io(_) | StoreError::Corrupt { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            _ if e.is_backend() => StatusCode::BAD_GATEWAY,
            EngineError::PreMatch(_) => StatusCode::BAD_GATEWAY,
            EngineError::EmptyMessage | EngineError::Config(_) | EngineError::Setting(_) | EngineError::Persona(_) => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

/// A static persona as full persona JSON or as a bare attribute list.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum PersonaInput {
    Full(Persona),
    Attributes(Vec<AttributeInput>),
}

#[derive(Debug, Deserialize)]
pub struct AttributeInput {
    pub category: String,
    pub text: String,
}

impl PersonaInput {
    fn into_persona(self) -> Result<Persona, ApiError> {
        match self {
            PersonaInput::Full(p) => Ok(p),
            PersonaInput::Attributes(list) => Persona::from_pairs(
                Role::Agent,
                AttributeOrigin::Initial,
                list.iter().map(|a| (PersonaCategory::coerce(&a.category), a.text.as_str())),
            )
            .map_err(|e| ApiError::bad_request(e.to_string())),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub setting: String,
    pub k: Option<u32>,
    pub m: Option<usize>,
    pub max_iters: Option<u32>,
    pub survey: Option<String>,
    pub static_persona: Option<PersonaInput>,
}

#[derive(Debug, Serialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub setting: PersonaSetting,
    pub config: EngineConfig,
}

#[derive(Debug, Deserialize)]
pub struct SendMessage {
    pub text: String,
}

#[derive(Debug, Serialize)]
pub struct StepReply {
    pub turn: u32,
    pub reply: String,
    pub events: Vec<AdaptationEvent>,
}

#[derive(Debug, Serialize)]
pub struct RefineReply {
    pub turn: u32,
    pub events: Vec<AdaptationEvent>,
    pub persona: Persona,
}

#[derive(Debug, Deserialize)]
pub struct PersonaQuery {
    pub turn: Option<u32>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/messages", post(send_message))
        .route("/sessions/{id}/persona", get(get_persona))
        .route("/sessions/{id}/trace", get(get_trace))
        .route("/sessions/{id}/refine", post(refine_now))
        .with_state(state)
}

async fn create_session(
    State(app): State<AppState>,
    body: Result<Json<CreateSession>, axum::extract::rejection::JsonRejection>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let Json(body) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let setting: PersonaSetting = body.setting.parse().map_err(ApiError::bad_request)?;
    let mut config = EngineConfig::with_setting(setting);
    if let Some(k) = body.k {
        config.refine_period = k;
    }
    if let Some(m) = body.m {
        config.top_m = m;
    }
    if let Some(i) = body.max_iters {
        config.max_iters = i;
    }
    let static_persona = body.static_persona.map(PersonaInput::into_persona).transpose()?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let engine = app.engine.clone();
    let (sid, cfg) = (id.clone(), config.clone());
    let state = tokio::task::spawn_blocking(move || engine.create_session(sid, cfg, body.survey.as_deref(), static_persona))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    app.store.insert(state)?;
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            session_id: id,
            setting,
            config,
        }),
    ))
}

/// Runs `f` against the session under its step guard and commits the result.
async fn exclusive_step<F>(app: &AppState, id: &str, f: F) -> Result<StepOutput, ApiError>
where
    F: FnOnce(&Engine, &personaflow::engine::SessionState) -> Result<StepOutput, EngineError> + Send + 'static,
{
    let store = app.store.clone();
    let engine = app.engine.clone();
    let id = id.to_string();
    tokio::task::spawn_blocking(move || {
        let guard = store.try_begin(&id)?;
        let out = f(&engine, &guard.state())?;
        guard.commit(&out.record, out.state.clone())?;
        Ok(out)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn send_message(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<SendMessage>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<StepReply>, ApiError> {
    let Json(body) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    if body.text.trim().is_empty() {
        app.store.get(&id)?;
        return Err(ApiError::bad_request("text must not be empty"));
    }
    let out = exclusive_step(&app, &id, move |engine, state| engine.step(state, &body.text)).await?;
    Ok(Json(StepReply {
        turn: out.record.turn,
        reply: out.reply,
        events: out.events,
    }))
}

async fn refine_now(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<RefineReply>, ApiError> {
    let out = exclusive_step(&app, &id, |engine, state| engine.refine_now(state)).await?;
    Ok(Json(RefineReply {
        turn: out.record.turn,
        events: out.events,
        persona: out.state.agent_persona,
    }))
}

async fn get_persona(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<PersonaQuery>,
) -> Result<Json<Persona>, ApiError> {
    let state = app.store.get(&id)?;
    match q.turn {
        None => Ok(Json(state.agent_persona.clone())),
        Some(turn) => state
            .persona_at(turn)
            .map(Json)
            .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, e.to_string())),
    }
}

async fn get_trace(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<AdaptationEvent>>, ApiError> {
    Ok(Json(app.store.get(&id)?.trace.clone()))
}
