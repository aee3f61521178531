use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use super::{fingerprint, Backend, ChatRequest, GatewayError};
use crate::metrics::tokenize;

/// Produces the completion for choice `index` of a request, or `None` to
/// decline.
pub type Responder = Arc<dyn Fn(&ChatRequest, u32) -> Option<String> + Send + Sync>;

const DEFAULT_DIM: usize = 64;

#[derive(Default)]
struct State {
    by_fingerprint: HashMap<String, Vec<String>>,
    queues: HashMap<String, VecDeque<Result<String, GatewayError>>>,
    responders: HashMap<String, Responder>,
    fallback: Option<Responder>,
    embeddings: HashMap<String, Vec<f64>>,
    embed_failure: Option<GatewayError>,
    calls: Vec<ChatRequest>,
    embed_calls: Vec<Vec<String>>,
}

/// Deterministic scripted backend.
///
/// Each completion choice is resolved in order: fingerprint script (variants
/// in registration order, cycling), the task's FIFO queue, the task
/// responder, the fallback responder. Anything else is an
/// [`GatewayError::Unscripted`] error.
#[derive(Default)]
pub struct MockBackend {
    state: Mutex<State>,
}

impl MockBackend {
    pub fn new() -> Arc<Self> {
        Arc::new(MockBackend::default())
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().expect("mock state poisoned")
    }

    /// Registers one more variant for requests with this fingerprint.
    pub fn script(&self, fp: impl Into<String>, reply: impl Into<String>) -> &Self {
        self.lock().by_fingerprint.entry(fp.into()).or_default().push(reply.into());
        self
    }

    pub fn script_request(&self, request: &ChatRequest, reply: impl Into<String>) -> &Self {
        self.script(fingerprint(request), reply)
    }

    /// Queues one reply for the next completion of `task`.
    pub fn push(&self, task: &str, reply: impl Into<String>) -> &Self {
        self.lock().queues.entry(task.to_string()).or_default().push_back(Ok(reply.into()));
        self
    }

    /// Queues a failure for the next completion of `task`.
    pub fn push_error(&self, task: &str, error: GatewayError) -> &Self {
        self.lock().queues.entry(task.to_string()).or_default().push_back(Err(error));
        self
    }

    pub fn respond(&self, task: &str, responder: impl Fn(&ChatRequest, u32) -> Option<String> + Send + Sync + 'static) -> &Self {
        self.lock().responders.insert(task.to_string(), Arc::new(responder));
        self
    }

    /// Constant reply for every completion of `task` not otherwise scripted.
    pub fn always(&self, task: &str, reply: impl Into<String>) -> &Self {
        let reply = reply.into();
        self.respond(task, move |_, _| Some(reply.clone()))
    }

    pub fn fallback(&self, responder: impl Fn(&ChatRequest, u32) -> Option<String> + Send + Sync + 'static) -> &Self {
        self.lock().fallback = Some(Arc::new(responder));
        self
    }

    pub fn set_embedding(&self, text: &str, vector: Vec<f64>) -> &Self {
        self.lock().embeddings.insert(text.to_string(), vector);
        self
    }

    pub fn fail_embeddings(&self, error: Option<GatewayError>) -> &Self {
        self.lock().embed_failure = error;
        self
    }

    /// Every chat request received, in order.
    pub fn calls(&self) -> Vec<ChatRequest> {
        self.lock().calls.clone()
    }

    pub fn calls_for(&self, task: &str) -> Vec<ChatRequest> {
        self.lock()
            .calls
            .iter()
            .filter(|r| r.task.as_deref() == Some(task))
            .cloned()
            .collect()
    }

    pub fn embed_calls(&self) -> Vec<Vec<String>> {
        self.lock().embed_calls.clone()
    }

    pub fn clear_calls(&self) {
        let mut state = self.lock();
        state.calls.clear();
        state.embed_calls.clear();
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, GatewayError> {
        let task = request.task.clone().unwrap_or_default();
        let fp = fingerprint(request);
        let (scripted, responder, fallback) = {
            let mut state = self.lock();
            state.calls.push(request.clone());
            (
                state.by_fingerprint.get(&fp).cloned(),
                state.responders.get(&task).cloned(),
                state.fallback.clone(),
            )
        };
        let mut out = Vec::with_capacity(request.n as usize);
        for choice in 0..request.n {
            if let Some(variants) = scripted.as_ref().filter(|v| !v.is_empty()) {
                out.push(variants[choice as usize % variants.len()].clone());
                continue;
            }
            let queued = self.lock().queues.get_mut(&task).and_then(VecDeque::pop_front);
            if let Some(reply) = queued {
                out.push(reply?);
                continue;
            }
            let reply = responder
                .as_ref()
                .and_then(|r| r(request, choice))
                .or_else(|| fallback.as_ref().and_then(|r| r(request, choice)));
            match reply {
                Some(text) => out.push(text),
                None => return Err(GatewayError::Unscripted(format!("task {task:?} (fingerprint {fp})"))),
            }
        }
        Ok(out)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let mut state = self.lock();
        state.embed_calls.push(texts.to_vec());
        if let Some(err) = state.embed_failure.clone() {
            return Err(err);
        }
        Ok(texts
            .iter()
            .map(|t| {
                state
                    .embeddings
                    .get(t)
                    .cloned()
                    .unwrap_or_else(|| hashing_embedding(t, DEFAULT_DIM))
            })
            .collect())
    }
}

/// Bag-of-words feature hashing (FNV-1a, signed buckets). Texts sharing
/// tokens get positive cosine similarity; never returns the zero vector.
pub fn hashing_embedding(text: &str, dim: usize) -> Vec<f64> {
    let dim = dim.max(2);
    let mut v = vec![0.0; dim];
    for token in tokenize(text) {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in token.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, Gateway};

    fn gateway(mock: &Arc<MockBackend>) -> Gateway {
        Gateway::mock(mock.clone())
    }

    #[test]
    fn fingerprint_script_lookup() {
        let mock = MockBackend::new();
        let gw = gateway(&mock);
        let req = gw.request("t", vec![ChatMessage::user("hi")]);
        mock.script_request(&req, "hello");
        assert_eq!(gw.chat(&req).unwrap(), vec!["hello"]);
    }

    #[test]
    fn n_variants_in_registration_order() {
        let mock = MockBackend::new();
        let gw = gateway(&mock);
        let mut req = gw.request("t", vec![ChatMessage::user("hi")]);
        req.n = 4;
        for v in ["a", "b", "c", "d"] {
            mock.script_request(&req, v);
        }
        assert_eq!(gw.chat(&req).unwrap(), vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn queue_then_responder_then_unscripted() {
        let mock = MockBackend::new();
        let gw = gateway(&mock);
        mock.push("t", "first");
        mock.always("t", "later");
        let req = gw.request("t", vec![ChatMessage::user("x")]);
        assert_eq!(gw.chat_one(&req).unwrap(), "first");
        assert_eq!(gw.chat_one(&req).unwrap(), "later");
        let other = gw.request("u", vec![ChatMessage::user("x")]);
        assert!(matches!(gw.chat(&other), Err(GatewayError::Unscripted(_))));
        assert_eq!(mock.calls_for("t").len(), 2);
    }

    #[test]
    fn queued_error_surfaces() {
        let mock = MockBackend::new();
        let gw = gateway(&mock);
        mock.push_error("t", GatewayError::Auth { status: 401 });
        let req = gw.request("t", vec![ChatMessage::user("x")]);
        assert_eq!(gw.chat(&req), Err(GatewayError::Auth { status: 401 }));
    }

    #[test]
    fn embeddings_fixture_and_normalized() {
        let mock = MockBackend::new();
        mock.set_embedding("a", vec![1.0, 0.0]).set_embedding("b", vec![0.0, 1.0]);
        let gw = gateway(&mock);
        let out = gw.embed(&["a".into(), "b".into()]).unwrap();
        assert_eq!(out, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);

        let texts: Vec<String> = ["one two", "three", "two one four"].iter().map(|s| s.to_string()).collect();
        let out = gw.embed(&texts).unwrap();
        assert_eq!(out.len(), 3);
        for v in &out {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn embedding_dimension_mismatch_is_protocol_error() {
        let mock = MockBackend::new();
        mock.set_embedding("a", vec![1.0, 0.0]).set_embedding("b", vec![0.0, 1.0, 0.0]);
        let gw = gateway(&mock);
        assert!(matches!(gw.embed(&["a".into(), "b".into()]), Err(GatewayError::Protocol(_))));
    }
}
