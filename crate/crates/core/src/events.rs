use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    UserAttrDetected,
    AttrMatched,
    CompatibilityRejected,
    AttrSkipped,
    ProfileRefined,
    RefineAborted,
    ManifestMarked,
    Warning,
}

impl EventKind {
    /// Position in the fixed within-step order; `None` for warnings, which
    /// may appear anywhere.
    pub fn phase(self) -> Option<u8> {
        match self {
            EventKind::UserAttrDetected => Some(0),
            EventKind::AttrMatched | EventKind::CompatibilityRejected | EventKind::AttrSkipped => Some(1),
            EventKind::ProfileRefined | EventKind::RefineAborted => Some(2),
            EventKind::ManifestMarked => Some(3),
            EventKind::Warning => None,
        }
    }
}

/// One entry of a session trace. `turn` is the user-turn count at the time
/// the event was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationEvent {
    pub kind: EventKind,
    pub turn: u32,
    pub payload: Value,
}

impl AdaptationEvent {
    pub fn new(kind: EventKind, turn: u32, payload: Value) -> Self {
        AdaptationEvent { kind, turn, payload }
    }

    pub fn warning(turn: u32, stage: &str, message: impl Into<String>) -> Self {
        let message = message.into();
        tracing::warn!(stage, turn, "{message}");
        AdaptationEvent::new(
            EventKind::Warning,
            turn,
            serde_json::json!({ "stage": stage, "message": message }),
        )
    }
}

/// True when the non-warning events respect the per-step phase order.
pub fn is_phase_ordered(events: &[AdaptationEvent]) -> bool {
    events
        .iter()
        .filter_map(|e| e.kind.phase())
        .collect::<Vec<_>>()
        .windows(2)
        .all(|w| w[0] <= w[1])
}
